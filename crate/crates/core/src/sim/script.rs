//! Adversary scripts: one action per line, `#` starts a comment.
//!
//! ```text
//! kind replay|eavesdrop|spy [control]
//! honest <controller> <service> <R|W|RW>
//! data <sid> read | data <sid> view <collection> | data <sid> write <doc> <gid> k=v...
//! plant <sid> <n>
//! advance <ms>
//! replay <selector> <delay_ms>
//! inject <hex envelope> <node>
//! read <selector>|*
//! guess <n>
//! register_rogue <name> <password> [enrolled]
//! attempt <controller> <service> <R|W|RW>
//! direct <controller> <collection>
//! query_user <username> <password> <target>
//! ```
//!
//! Selectors address honest log entries: `<index>`, `first:<TAG>` or `last:<TAG>`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::data::{DataRequest, DataResponse};
use super::nodes::Outcome;
use super::report::AttackReport;
use super::{Origin, Simulation};
use crate::channel::CipherSuiteId;
use crate::crypto::SymmetricKey;
use crate::directory::{Permission, Permissions};
use crate::model::{ControllerId, Defenses, ServiceId};
use crate::scenario::{ScenarioConfig, ScenarioError, Sources, World};
use crate::store::{Document, SECURED_VIEW};
use crate::wire::{Envelope, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Replay,
    Eavesdrop,
    Spy,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Replay, AttackKind::Eavesdrop, AttackKind::Spy];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Replay => "replay",
            AttackKind::Eavesdrop => "eavesdrop",
            AttackKind::Spy => "spy",
        }
    }

    /// Defences in force for a run. A control run switches off exactly the
    /// defences this attack targets.
    pub fn defenses(self, control: bool) -> Defenses {
        let mut d = Defenses::default();
        if control {
            match self {
                AttackKind::Replay => {
                    d.ticket_expiry = false;
                    d.timestamp_reuse = false;
                    d.record_sequence = false;
                }
                AttackKind::Eavesdrop => d.record_encryption = false,
                AttackKind::Spy => {
                    d.dac = false;
                    d.user_authorization = false;
                }
            }
        }
        d
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown attack kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    MalformedScript { line: usize, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot read script: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Index(usize),
    First(Tag),
    Last(Tag),
    All,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Honest {
        controller: ControllerId,
        service: ServiceId,
        perms: Permissions,
    },
    Data { sid: u64, request: DataRequest },
    Plant { sid: u64, count: usize },
    Advance(u64),
    Replay { selector: Selector, delay_ms: u64 },
    Inject { envelope: Envelope, to: String },
    Read(Selector),
    Guess(usize),
    RegisterRogue {
        name: ControllerId,
        password: String,
        enrolled: bool,
    },
    Attempt {
        controller: ControllerId,
        service: ServiceId,
        perms: Permissions,
    },
    Direct { controller: ControllerId, collection: String },
    QueryUser {
        username: String,
        password: String,
        target: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryScript {
    pub kind: AttackKind,
    pub control: bool,
    /// (line number, action)
    pub actions: Vec<(usize, Action)>,
}

impl AdversaryScript {
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io(format!("{}: {e}", path.display())))?;
        parse_script(&text)
    }
}

fn parse_selector(s: &str) -> Result<Selector, String> {
    if s == "*" {
        return Ok(Selector::All);
    }
    let tag = |name: &str| {
        Tag::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| format!("unknown tag `{name}`"))
    };
    if let Some(t) = s.strip_prefix("first:") {
        return Ok(Selector::First(tag(t)?));
    }
    if let Some(t) = s.strip_prefix("last:") {
        return Ok(Selector::Last(tag(t)?));
    }
    s.parse()
        .map(Selector::Index)
        .map_err(|_| format!("bad selector `{s}`"))
}

fn num<T: FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} `{s}`"))
}

fn ctl(s: &str) -> Result<ControllerId, String> {
    ControllerId::new(s).map_err(|e| e.to_string())
}

fn svc(s: &str) -> Result<ServiceId, String> {
    ServiceId::new(s).map_err(|e| e.to_string())
}

fn perms(s: &str) -> Result<Permissions, String> {
    let p: Permissions = s.parse().map_err(|e| format!("{e}"))?;
    if p.is_empty() {
        return Err("empty permission request".into());
    }
    Ok(p)
}

fn parse_action(t: &[&str]) -> Result<Action, String> {
    Ok(match t {
        ["honest", c, s, p] => Action::Honest {
            controller: ctl(c)?,
            service: svc(s)?,
            perms: perms(p)?,
        },
        ["data", sid, "read"] => Action::Data {
            sid: num(sid, "session id")?,
            request: DataRequest::Read { collection: String::new() },
        },
        ["data", sid, "view", col] => Action::Data {
            sid: num(sid, "session id")?,
            request: DataRequest::View { collection: col.to_string() },
        },
        ["data", sid, "write", doc, gid, fields @ ..] => {
            let mut kv = Vec::new();
            for f in fields {
                let (k, v) = f.split_once('=').ok_or_else(|| format!("expected k=v, found `{f}`"))?;
                kv.push((k, v));
            }
            Action::Data {
                sid: num(sid, "session id")?,
                request: DataRequest::Write {
                    collection: String::new(),
                    doc: Document::new(doc, gid, kv),
                },
            }
        }
        ["plant", sid, n] => Action::Plant {
            sid: num(sid, "session id")?,
            count: num(n, "count")?,
        },
        ["advance", ms] => Action::Advance(num(ms, "duration")?),
        ["replay", sel, delay] => Action::Replay {
            selector: match parse_selector(sel)? {
                Selector::All => return Err("replay needs a single entry".into()),
                s => s,
            },
            delay_ms: num(delay, "delay")?,
        },
        ["inject", hexed, to] => {
            let bytes = hex::decode(hexed).map_err(|e| format!("bad hex: {e}"))?;
            Action::Inject {
                envelope: Envelope::decode(&bytes).map_err(|e| format!("bad envelope: {e}"))?,
                to: to.to_string(),
            }
        }
        ["read", sel] => Action::Read(parse_selector(sel)?),
        ["guess", n] => Action::Guess(num(n, "count")?),
        ["register_rogue", name, pw] => Action::RegisterRogue {
            name: ctl(name)?,
            password: pw.to_string(),
            enrolled: false,
        },
        ["register_rogue", name, pw, "enrolled"] => Action::RegisterRogue {
            name: ctl(name)?,
            password: pw.to_string(),
            enrolled: true,
        },
        ["attempt", c, s, p] => Action::Attempt {
            controller: ctl(c)?,
            service: svc(s)?,
            perms: perms(p)?,
        },
        ["direct", c, col] => Action::Direct {
            controller: ctl(c)?,
            collection: col.to_string(),
        },
        ["query_user", u, pw, target] => Action::QueryUser {
            username: u.to_string(),
            password: pw.to_string(),
            target: target.to_string(),
        },
        [verb, ..] => return Err(format!("unknown or malformed action `{verb}`")),
        [] => unreachable!("blank lines are skipped"),
    })
}

pub fn parse_script(text: &str) -> Result<AdversaryScript, ScriptError> {
    let mut header: Option<(AttackKind, bool)> = None;
    let mut actions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let t: Vec<&str> = content.split_whitespace().collect();
        let err = |message: String| ScriptError::Parse { line, message };
        if header.is_none() {
            header = Some(match t.as_slice() {
                ["kind", k] => (k.parse().map_err(err)?, false),
                ["kind", k, "control"] => (k.parse().map_err(err)?, true),
                _ => return Err(err("script must start with `kind <replay|eavesdrop|spy> [control]`".into())),
            });
            continue;
        }
        actions.push((line, parse_action(&t).map_err(err)?));
    }
    let (kind, control) = header.ok_or(ScriptError::Parse {
        line: 0,
        message: "empty script".into(),
    })?;
    Ok(AdversaryScript { kind, control, actions })
}

/// Report and delivery log of one scripted run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRun {
    pub report: AttackReport,
    pub log: String,
}

/// Builds a fresh world with the defences the script's kind and control flag
/// call for, then executes the script against it.
pub fn run_script(script: &AdversaryScript, config: &ScenarioConfig, sources: &Sources) -> Result<ScriptRun, ScriptError> {
    let world = World::build(config, sources, script.kind.defenses(script.control))?;
    let mut sim = Simulation::new(world);
    let report = execute(script, &mut sim)?;
    Ok(ScriptRun {
        report,
        log: sim.render_log(),
    })
}

fn check_kind(script: &AdversaryScript, kind: AttackKind) -> Result<(), ScriptError> {
    if script.kind != kind {
        return Err(ScriptError::MalformedScript {
            line: 1,
            message: format!("expected a {kind} script, found {}", script.kind),
        });
    }
    Ok(())
}

pub fn run_replay_attack(script: &AdversaryScript, sim: &mut Simulation) -> Result<AttackReport, ScriptError> {
    check_kind(script, AttackKind::Replay)?;
    execute(script, sim)
}

pub fn run_eavesdrop_attack(script: &AdversaryScript, sim: &mut Simulation) -> Result<AttackReport, ScriptError> {
    check_kind(script, AttackKind::Eavesdrop)?;
    execute(script, sim)
}

pub fn run_spy_attack(script: &AdversaryScript, sim: &mut Simulation) -> Result<AttackReport, ScriptError> {
    check_kind(script, AttackKind::Spy)?;
    execute(script, sim)
}

struct Exec<'a> {
    sim: &'a mut Simulation,
    report: AttackReport,
    honest: Vec<u64>,
    secrets: Vec<Vec<u8>>,
    planted: usize,
}

/// Runs every action of `script` against `sim`, letting the network settle
/// after each one.
pub fn execute(script: &AdversaryScript, sim: &mut Simulation) -> Result<AttackReport, ScriptError> {
    let mut ex = Exec {
        sim,
        report: AttackReport::new(script.kind, script.control),
        honest: Vec::new(),
        secrets: Vec::new(),
        planted: 0,
    };
    for (line, action) in &script.actions {
        ex.step(action)
            .map_err(|message| ScriptError::MalformedScript { line: *line, message })?;
    }
    let mut report = ex.report;
    report.honest_started = ex.honest.len();
    for sid in &ex.honest {
        if let Some(s) = ex.sim.session(*sid) {
            if s.is_established() {
                report.honest_established += 1;
            }
            report.honest_served += s
                .responses
                .iter()
                .filter(|r| !matches!(r, DataResponse::Denied(_)))
                .count();
        }
    }
    Ok(report)
}

impl Exec<'_> {
    fn resolve(&self, sel: &Selector) -> Result<Vec<usize>, String> {
        let honest = self.sim.log().iter().filter(|e| e.origin == Origin::Honest);
        let found = match sel {
            Selector::All => return Ok(honest.map(|e| e.index).collect()),
            Selector::Index(i) => honest.clone().find(|e| e.index == *i).map(|e| e.index),
            Selector::First(t) => honest.clone().find(|e| e.envelope.tag == *t).map(|e| e.index),
            Selector::Last(t) => honest.clone().rfind(|e| e.envelope.tag == *t).map(|e| e.index),
        };
        found
            .map(|i| vec![i])
            .ok_or_else(|| format!("selector {sel:?} matches no honest log entry"))
    }

    fn service_of(&self, sid: u64) -> Result<ServiceId, String> {
        self.sim
            .session(sid)
            .map(|s| s.service.clone())
            .ok_or_else(|| format!("no session {sid}"))
    }

    /// Sends an adversary envelope, delivers it, and scores the outcome of
    /// that delivery. Held (pending) messages are not scored.
    fn inject(&mut self, from: &str, to: &str, env: Envelope) {
        self.sim.send(from, to, env, Origin::Adversary);
        let range = self.sim.run();
        let entry = &self.sim.log()[range.start];
        match entry.outcome.clone() {
            Outcome::Pending => {}
            Outcome::Accepted => self.report.attempt(true),
            Outcome::Rejected(e) => {
                let node = entry.to.clone();
                self.report.attempt(false);
                self.report.defended(&node, &e);
            }
        }
    }

    fn step(&mut self, action: &Action) -> Result<(), String> {
        match action {
            Action::Honest {
                controller,
                service,
                perms,
            } => {
                let sid = self
                    .sim
                    .start_session(controller, None, service, *perms)
                    .ok_or_else(|| format!("unknown controller `{controller}`"))?;
                self.honest.push(sid);
                self.sim.run();
            }
            Action::Data { sid, request } => {
                let service = self.service_of(*sid)?;
                let req = match request.clone() {
                    DataRequest::Read { .. } => DataRequest::Read {
                        collection: service.as_str().to_owned(),
                    },
                    DataRequest::Write { doc, .. } => DataRequest::Write {
                        collection: service.as_str().to_owned(),
                        doc,
                    },
                    v @ DataRequest::View { .. } => v,
                };
                self.sim.submit(*sid, req);
                self.sim.run();
            }
            Action::Plant { sid, count } => {
                let service = self.service_of(*sid)?;
                for _ in 0..*count {
                    let secret = self.sim.world.rng.bytes(16);
                    self.planted += 1;
                    let doc = Document::new(
                        &format!("planted-{}", self.planted),
                        "planted",
                        [("note", hex::encode(&secret))],
                    );
                    self.secrets.push(secret);
                    self.sim.submit(
                        *sid,
                        DataRequest::Write {
                            collection: service.as_str().to_owned(),
                            doc,
                        },
                    );
                }
                self.sim.run();
            }
            Action::Advance(ms) => {
                self.sim.world.clock.advance(*ms);
            }
            Action::Replay { selector, delay_ms } => {
                let idx = self.resolve(selector)?[0];
                let e = self.sim.log()[idx].clone();
                self.sim.world.clock.advance(*delay_ms);
                self.inject(&e.from, &e.to, e.envelope);
            }
            Action::Inject { envelope, to } => self.inject("adversary", to, envelope.clone()),
            Action::Read(selector) => {
                if self.secrets.is_empty() {
                    return Err("nothing planted to look for".into());
                }
                for idx in self.resolve(selector)? {
                    let bytes = self.sim.log()[idx].envelope.encode();
                    let leaked = self.secrets.iter().any(|s| {
                        contains(&bytes, s) || contains(&bytes, hex::encode(s).as_bytes())
                    });
                    self.report.attempt(leaked);
                    if !leaked {
                        let node = self.sim.log()[idx].to.clone();
                        self.report.defended(&node, "Confidential");
                    }
                }
            }
            Action::Guess(n) => self.guess(*n),
            Action::RegisterRogue {
                name,
                password,
                enrolled,
            } => self.sim.add_rogue(name, password, *enrolled)?,
            Action::Attempt {
                controller,
                service,
                perms,
            } => self.attempt(controller, service, *perms)?,
            Action::Direct { controller, collection } => {
                let sid = self.sim.fresh_session_id();
                let from = crate::protocol::node_controller(controller);
                let to = crate::protocol::node_dbs(&ServiceId::new(collection.as_str()).map_err(|e| e.to_string())?);
                let hello = crate::channel::client_hello(&[crate::channel::SUPPORTED_VERSION], &self.sim.world.suites)
                    .map_err(|e| e.to_string())?;
                self.inject(&from, &to, Envelope::new(Tag::ClientHello, sid, hello.to_bytes()));
                let body = DataRequest::Read {
                    collection: collection.clone(),
                }
                .to_bytes();
                let mut record = (body.len() as u32).to_be_bytes().to_vec();
                record.extend(body);
                self.inject(&from, &to, Envelope::new(Tag::Record, sid, record));
            }
            Action::QueryUser {
                username,
                password,
                target,
            } => match self.sim.gateway_query(username, password, target) {
                Ok(docs) => self.report.attempt(!docs.is_empty()),
                Err((node, e)) => {
                    self.report.attempt(false);
                    self.report.defended(&node, &e);
                }
            },
        }
        Ok(())
    }

    /// A full ticketing run by `controller` followed by one data request.
    fn attempt(&mut self, controller: &ControllerId, service: &ServiceId, perms: Permissions) -> Result<(), String> {
        let sid = self
            .sim
            .start_session(controller, None, service, perms)
            .ok_or_else(|| format!("unknown controller `{controller}`"))?;
        let req = if service.as_str() == SECURED_VIEW {
            DataRequest::View {
                collection: "clinic".into(),
            }
        } else if perms.contains(Permission::Read) {
            DataRequest::Read {
                collection: service.as_str().to_owned(),
            }
        } else {
            DataRequest::Write {
                collection: service.as_str().to_owned(),
                doc: Document::new(&format!("rogue-{sid}"), "rogue", [("x", "1")]),
            }
        };
        self.sim.submit(sid, req);
        let range = self.sim.run();
        let s = self.sim.session(sid).expect("just started");
        let obtained = s.responses.iter().any(|r| match r {
            DataResponse::Documents(d) => !d.is_empty(),
            DataResponse::Written => true,
            DataResponse::Denied(_) => false,
        });
        self.report.attempt(obtained);
        if !obtained {
            let stop = self.sim.log()[range]
                .iter()
                .find_map(|e| match &e.outcome {
                    Outcome::Rejected(err) if e.envelope.session_id == sid => Some((e.to.clone(), err.clone())),
                    _ => None,
                })
                .unwrap_or_else(|| ("store".to_owned(), "NoData".to_owned()));
            self.report.defended(&stop.0, &stop.1);
        }
        Ok(())
    }

    /// Tries to open observed records with keys cut from observed traffic or
    /// hashed from it.
    fn guess(&mut self, n: usize) {
        let log = self.sim.log();
        let records: Vec<Vec<u8>> = log
            .iter()
            .filter(|e| e.envelope.tag == Tag::Record && e.envelope.body.len() > 4)
            .map(|e| e.envelope.body[4..].to_vec())
            .collect();
        let observed: Vec<Vec<u8>> = log.iter().map(|e| e.envelope.encode()).collect();
        if records.is_empty() || observed.is_empty() {
            return;
        }
        let suites: Vec<_> = CipherSuiteId::all().iter().map(|s| s.suite()).collect();
        let rng = self.sim.world.rng.clone();
        for i in 0..n {
            let target = &records[i % records.len()];
            let source = &observed[rng.below(observed.len() as u64) as usize];
            let suite = &suites[i % suites.len()];
            let len = suite.cipher.key_len();
            let key = if i % 2 == 0 && source.len() >= len {
                let off = rng.below((source.len() - len + 1) as u64) as usize;
                source[off..off + len].to_vec()
            } else {
                let mut d = suite.hash.digest(source);
                d.resize(len, 0);
                d
            };
            let opened = suite.cipher.decrypt(&SymmetricKey::from_bytes(key), target).is_ok();
            self.report.attempt(opened);
            if !opened {
                self.report.defended("channel", "IntegrityFailure");
            }
        }
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

pub const BUNDLED_SCRIPTS: [(&str, &str); 6] = [
    ("replay", include_str!("../../fixtures/scripts/replay.txt")),
    ("replay_control", include_str!("../../fixtures/scripts/replay_control.txt")),
    ("eavesdrop", include_str!("../../fixtures/scripts/eavesdrop.txt")),
    ("eavesdrop_control", include_str!("../../fixtures/scripts/eavesdrop_control.txt")),
    ("spy", include_str!("../../fixtures/scripts/spy.txt")),
    ("spy_control", include_str!("../../fixtures/scripts/spy_control.txt")),
];

pub fn bundled(name: &str) -> Option<AdversaryScript> {
    BUNDLED_SCRIPTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_script(text).expect("bundled scripts parse"))
}
