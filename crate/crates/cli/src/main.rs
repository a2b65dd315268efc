use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ehr_guard::authz::{self, Verdict};
use ehr_guard::directory::Permissions;
use ehr_guard::model::{ControllerId, Defenses, ServiceId, UserId};
use ehr_guard::scenario::{load_scenario, ScenarioConfig, Sources, World};
use ehr_guard::sim::script::{bundled, run_script, AdversaryScript};
use ehr_guard::sim::sweep::{ttl_sweep, SWEEP_TTLS_MS};

const EXIT_OK: u8 = 0;
const EXIT_DENY: u8 = 1;
const EXIT_DOMAIN: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Machine,
}

/// Scenario runner for the access-control toolkit.
#[derive(Debug, Parser)]
#[command(name = "ehr-guard", version)]
struct Cli {
    /// Scenario file (TOML); built-in fixtures when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Token lifetime in milliseconds.
    #[arg(long = "ttl-token", global = true)]
    ttl_token: Option<u64>,
    /// Ticket lifetime in milliseconds.
    #[arg(long = "ttl-ticket", global = true)]
    ttl_ticket: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide whether user USER may query TARGET's records.
    Authz { user: String, target: String },
    /// Run the ticketing exchange for a controller and print the transcript.
    Handshake {
        controller: String,
        service: String,
        /// R, W or RW
        perms: String,
        /// Use this password instead of the configured one.
        #[arg(long)]
        password: Option<String>,
    },
    /// Run an adversary script (a path, or the name of a bundled script).
    Attack { script: String },
    /// Replay a ticket just before and at several lifetimes.
    TtlSweep,
}

fn load(cli: &Cli) -> Result<(ScenarioConfig, Sources), String> {
    let (mut config, sources) = match &cli.config {
        Some(path) => load_scenario(path).map_err(|e| e.to_string())?,
        None => (ScenarioConfig::default(), Sources::default()),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(t) = cli.ttl_token {
        config.ttl_token_ms = t;
    }
    if let Some(t) = cli.ttl_ticket {
        config.ttl_ticket_ms = t;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok((config, sources))
}

fn build(config: &ScenarioConfig, sources: &Sources) -> Result<World, String> {
    World::build(config, sources, Defenses::default()).map_err(|e| e.to_string())
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn cmd_authz(world: &World, user: &str, target: &str, fmt: ReportFormat) -> ExitCode {
    let decision = (|| {
        let requester = world.registry.user(&UserId::new(user).ok()?)?;
        let target = UserId::new(target).ok()?;
        authz::evaluate(&world.registry, &requester.roles, &requester.org_id, &target).ok()
    })();
    let (line, code) = match decision {
        Some(v) => (v.describe().to_owned(), if v == Verdict::Allow { EXIT_OK } else { EXIT_DENY }),
        None => ("ERROR unknown user".to_owned(), EXIT_DOMAIN),
    };
    match fmt {
        ReportFormat::Text => println!("{line}"),
        ReportFormat::Machine => {
            println!("user={user}");
            println!("target={target}");
            let verdict = match decision {
                Some(Verdict::Allow) => "allow",
                Some(Verdict::DenyStewardship) => "deny_legal_stewardship",
                Some(Verdict::DenyMembership) => "deny_solid_membership",
                None => "error_unknown_user",
            };
            println!("verdict={verdict}");
        }
    }
    ExitCode::from(code)
}

fn cmd_handshake(
    world: &World,
    controller: &str,
    service: &str,
    perms: &str,
    password: Option<&str>,
    fmt: ReportFormat,
) -> ExitCode {
    let perms: Permissions = match perms.parse() {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    let (Ok(controller), Ok(service)) = (ControllerId::new(controller), ServiceId::new(service)) else {
        return usage("controller and service must be non-empty");
    };
    let run = world.handshake(&controller, password, &service, perms, 1);
    for (i, hop) in run.hops.iter().enumerate() {
        match fmt {
            ReportFormat::Text => println!(
                "{:>2} {:<6} {} -> {} ({} bytes)",
                i + 1,
                hop.envelope.tag.name(),
                hop.from,
                hop.to,
                hop.envelope.body.len()
            ),
            ReportFormat::Machine => println!(
                "hop={} tag={} from={} to={} bytes={}",
                i + 1,
                hop.envelope.tag.name(),
                hop.from,
                hop.to,
                hop.envelope.body.len()
            ),
        }
    }
    let failure = run.failure().map(|(step, err)| {
        let name = match err {
            ehr_guard::protocol::ProtocolError::Rejected { error, .. } => format!("Reject({error})"),
            other => other.name().to_owned(),
        };
        (step.label(), name)
    });
    match (fmt, &failure) {
        (ReportFormat::Text, None) => println!("phase: {:?}", run.client_phase),
        (ReportFormat::Text, Some((step, err))) => {
            println!("phase: {:?}", run.client_phase);
            println!("failed at {step}: {err}");
        }
        (ReportFormat::Machine, _) => {
            println!("phase={:?}", run.client_phase);
            if let Some((step, err)) = &failure {
                println!("failed_step={step}");
                println!("error={err}");
            }
        }
    }
    ExitCode::from(if failure.is_none() { EXIT_OK } else { EXIT_DENY })
}

fn cmd_attack(config: &ScenarioConfig, sources: &Sources, script: &str, fmt: ReportFormat) -> ExitCode {
    let path = Path::new(script);
    let parsed: AdversaryScript = if path.exists() {
        match AdversaryScript::load(path) {
            Ok(s) => s,
            Err(e) => return usage(e),
        }
    } else {
        match bundled(script) {
            Some(s) => s,
            None => return usage(format!("no script file or bundled script named `{script}`")),
        }
    };
    match run_script(&parsed, config, sources) {
        Ok(run) => {
            match fmt {
                ReportFormat::Text => print!("{}", run.report.render_text()),
                ReportFormat::Machine => print!("{}", run.report.render_machine()),
            }
            ExitCode::from(if run.report.succeeded() { EXIT_DENY } else { EXIT_OK })
        }
        Err(e @ ehr_guard::sim::ScriptError::Scenario(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DOMAIN)
        }
        Err(e) => usage(e),
    }
}

fn cmd_sweep(config: &ScenarioConfig, sources: &Sources, fmt: ReportFormat) -> ExitCode {
    let rows = match ttl_sweep(config, sources, &SWEEP_TTLS_MS) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_DOMAIN);
        }
    };
    for r in &rows {
        match fmt {
            ReportFormat::Text => println!(
                "ttl {:>8} ms: at ttl-1 {}, at ttl {}",
                r.ttl_ms,
                r.before.render(),
                r.at.render()
            ),
            ReportFormat::Machine => println!(
                "sweep_ttl_ms={} before={} at={}",
                r.ttl_ms,
                r.before.render(),
                r.at.render()
            ),
        }
    }
    ExitCode::from(if rows.iter().all(|r| r.boundary_holds()) { EXIT_OK } else { EXIT_DENY })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (config, sources) = match load(&cli) {
        Ok(x) => x,
        Err(e) => return usage(e),
    };
    match &cli.command {
        Command::Authz { user, target } => match build(&config, &sources) {
            Ok(w) => cmd_authz(&w, user, target, cli.report),
            Err(e) => usage(e),
        },
        Command::Handshake {
            controller,
            service,
            perms,
            password,
        } => match build(&config, &sources) {
            Ok(w) => cmd_handshake(&w, controller, service, perms, password.as_deref(), cli.report),
            Err(e) => usage(e),
        },
        Command::Attack { script } => cmd_attack(&config, &sources, script, cli.report),
        Command::TtlSweep => cmd_sweep(&config, &sources, cli.report),
    }
}
