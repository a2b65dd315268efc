//! Scenario configuration and the assembled in-process deployment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::channel::CipherSuiteId;
use crate::clock::{Clock, Timestamp};
use crate::crypto::{CryptoSuite, SeededRng};
use crate::directory::{DacEntry, Directory, EntryAttributes, Permissions};
use crate::fixtures::{self, ParseError};
use crate::model::{ControllerCredential, ControllerId, Defenses, OrgId, ServiceId, UserCredential, UserId};
use crate::protocol::{HandshakeRun, Realm, DEFAULT_TICKET_TTL_MS};
use crate::registry::{OrgRecord, UserRegistry};
use crate::store::{DataStore, SECURED_VIEW};
use crate::token::{TokenService, DEFAULT_TOKEN_TTL_MS};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_START_MS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("invalid scenario file: {0}")]
    Config(String),
    #[error(transparent)]
    Fixture(#[from] ParseError),
    #[error("inconsistent fixtures: {0}")]
    Setup(String),
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_token_ttl() -> u64 {
    DEFAULT_TOKEN_TTL_MS
}
fn default_ticket_ttl() -> u64 {
    DEFAULT_TICKET_TTL_MS
}
fn default_start() -> u64 {
    DEFAULT_START_MS
}
fn default_suites() -> Vec<String> {
    crate::channel::KNOWN_SUITES.iter().map(|s| s.to_string()).collect()
}

/// Fixture paths left unset fall back to the built-in defaults. Relative
/// paths resolve against the scenario file's directory.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_token_ttl")]
    pub ttl_token_ms: u64,
    #[serde(default = "default_ticket_ttl")]
    pub ttl_ticket_ms: u64,
    #[serde(default = "default_start")]
    pub start_ms: u64,
    pub directory_fixture: Option<PathBuf>,
    pub user_fixture: Option<PathBuf>,
    pub collection_fixtures: Option<Vec<PathBuf>>,
    pub qi_registry: Option<PathBuf>,
    #[serde(default = "default_suites")]
    pub suites: Vec<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: DEFAULT_SEED,
            ttl_token_ms: DEFAULT_TOKEN_TTL_MS,
            ttl_ticket_ms: DEFAULT_TICKET_TTL_MS,
            start_ms: DEFAULT_START_MS,
            directory_fixture: None,
            user_fixture: None,
            collection_fixtures: None,
            qi_registry: None,
            suites: default_suites(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.ttl_token_ms == 0 || self.ttl_ticket_ms == 0 {
            return Err(ScenarioError::Config("TTLs must be positive".into()));
        }
        if self.suites.is_empty() {
            return Err(ScenarioError::Config("suite list is empty".into()));
        }
        for s in &self.suites {
            CipherSuiteId::new(s).map_err(|e| ScenarioError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Fixture text, already read from disk or taken from the defaults.
#[derive(Debug, Clone)]
pub struct Sources {
    pub directory: (String, String),
    pub users: (String, String),
    pub collections: Vec<(String, String)>,
    pub qi: (String, String),
}

impl Default for Sources {
    fn default() -> Self {
        let named = |n: &str, t: &str| (format!("<default {n}>"), t.to_owned());
        Sources {
            directory: named("directory", fixtures::DEFAULT_DIRECTORY),
            users: named("users", fixtures::DEFAULT_USERS),
            collections: fixtures::DEFAULT_COLLECTIONS
                .iter()
                .map(|t| named("collection", t))
                .collect(),
            qi: named("qi", fixtures::DEFAULT_QI),
        }
    }
}

fn read(base: &Path, p: &Path) -> Result<(String, String), ScenarioError> {
    let path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::fs::read_to_string(&path)
        .map(|t| (path.display().to_string(), t))
        .map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

impl Sources {
    pub fn load(config: &ScenarioConfig, base: &Path) -> Result<Self, ScenarioError> {
        let mut s = Sources::default();
        if let Some(p) = &config.directory_fixture {
            s.directory = read(base, p)?;
        }
        if let Some(p) = &config.user_fixture {
            s.users = read(base, p)?;
        }
        if let Some(ps) = &config.collection_fixtures {
            s.collections = ps.iter().map(|p| read(base, p)).collect::<Result<_, _>>()?;
        }
        if let Some(p) = &config.qi_registry {
            s.qi = read(base, p)?;
        }
        Ok(s)
    }
}

/// Reads a scenario file and every fixture it names.
pub fn load_scenario(path: &Path) -> Result<(ScenarioConfig, Sources), ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let config = ScenarioConfig::from_toml(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let sources = Sources::load(&config, base)?;
    Ok((config, sources))
}

/// Every component of one deployment, built deterministically from a seed.
pub struct World {
    pub config: ScenarioConfig,
    pub clock: Clock,
    pub rng: SeededRng,
    pub suite: CryptoSuite,
    pub defenses: Defenses,
    pub registry: Arc<UserRegistry>,
    pub directory: Arc<Directory>,
    pub tokens: TokenService,
    pub realm: Realm,
    pub store: DataStore,
    pub suites: Vec<CipherSuiteId>,
    /// Each controller's own configured password.
    pub controller_passwords: BTreeMap<ControllerId, String>,
    pub user_passwords: BTreeMap<String, String>,
}

fn setup<E: std::fmt::Display>(e: E) -> ScenarioError {
    ScenarioError::Setup(e.to_string())
}

impl World {
    pub fn build(config: &ScenarioConfig, sources: &Sources, defenses: Defenses) -> Result<World, ScenarioError> {
        config.validate()?;
        let dir_fx = fixtures::parse_directory(&sources.directory.0, &sources.directory.1)?;
        let user_fx = fixtures::parse_users(&sources.users.0, &sources.users.1)?;
        let collections = sources
            .collections
            .iter()
            .map(|(n, t)| fixtures::parse_collection(n, t))
            .collect::<Result<Vec<_>, _>>()?;
        let qi = fixtures::parse_qi(&sources.qi.0, &sources.qi.1)?;

        let rng = SeededRng::from_seed(config.seed);
        let suite = CryptoSuite::default();
        let clock = Clock::manual(Timestamp(config.start_ms));

        let registry = Arc::new(UserRegistry::new());
        let mut orgs = BTreeMap::new();
        for o in &user_fx.orgs {
            let id = OrgId::new(o.id.clone(), o.kind).map_err(setup)?;
            let rec = match &o.admin_roles {
                Some(roles) => OrgRecord::new(id.clone(), roles.iter().copied()),
                None => OrgRecord::with_default_admins(id.clone()),
            };
            registry.add_org(rec).map_err(setup)?;
            orgs.insert(o.id.clone(), id);
        }
        let mut user_passwords = BTreeMap::new();
        for u in &user_fx.users {
            let org = orgs
                .get(&u.org)
                .ok_or_else(|| ScenarioError::Setup(format!("user `{}` names unknown org `{}`", u.id, u.org)))?;
            let id = UserId::new(u.id.clone()).map_err(setup)?;
            let cred = UserCredential::new(id, &u.username, &u.password, u.roles.clone(), org.clone(), &rng)
                .map_err(setup)?;
            let supervisor = u.supervisor.as_deref().map(UserId::new).transpose().map_err(setup)?;
            registry.add_user(cred, supervisor, u.group.clone()).map_err(setup)?;
            user_passwords.insert(u.username.clone(), u.password.clone());
        }

        let directory = Arc::new(Directory::new());
        let mut controller_passwords = BTreeMap::new();
        for c in &dir_fx.controllers {
            let id = ControllerId::new(c.name.clone()).map_err(setup)?;
            let cred = ControllerCredential::new(id.clone(), &c.name, &c.password, &suite, &rng).map_err(setup)?;
            let acl = dir_fx
                .dac
                .iter()
                .filter(|r| r.controller == c.name)
                .map(|r| DacEntry::new(id.clone(), &r.collection, r.permissions))
                .collect();
            let attrs = EntryAttributes {
                org: c.org.clone(),
                group: c.group.clone(),
                domain_name: c.domain.clone(),
            };
            directory.register_with_attributes(cred, attrs, acl).map_err(setup)?;
            controller_passwords.insert(id, c.password.clone());
        }
        if let Some(r) = dir_fx.dac.iter().find(|r| !controller_passwords.keys().any(|c| c.as_str() == r.controller)) {
            return Err(ScenarioError::Setup(format!("DAC row names unknown controller `{}`", r.controller)));
        }

        let tokens = TokenService::new(suite.clone(), registry.clone(), &rng).with_ttl(config.ttl_token_ms);

        let mut services: Vec<ServiceId> = collections
            .iter()
            .map(|c| ServiceId::new(c.name.clone()).map_err(setup))
            .collect::<Result<_, _>>()?;
        services.push(ServiceId::from(SECURED_VIEW));
        let realm = Realm::new(directory.clone(), suite.clone(), &rng, config.ttl_ticket_ms, defenses, services);

        let store = DataStore::new(directory.clone(), qi, rng.bytes(32), clock.clone()).with_defenses(defenses);
        for c in collections {
            store.create_collection(&c.name, c.tier, &c.server_id).map_err(setup)?;
            for d in c.documents {
                store.seed(&c.name, d).map_err(setup)?;
            }
        }

        let suites = config
            .suites
            .iter()
            .map(|s| CipherSuiteId::new(s).map_err(setup))
            .collect::<Result<_, _>>()?;

        Ok(World {
            config: config.clone(),
            clock,
            rng,
            suite,
            defenses,
            registry,
            directory,
            tokens,
            realm,
            store,
            suites,
            controller_passwords,
            user_passwords,
        })
    }

    /// The built-in fixtures under `seed`.
    pub fn default_with_seed(seed: u64) -> World {
        let config = ScenarioConfig {
            seed,
            ..ScenarioConfig::default()
        };
        World::build(&config, &Sources::default(), Defenses::default()).expect("default fixtures are consistent")
    }

    /// Runs a full exchange for `controller` using its configured password,
    /// or `password` when given.
    pub fn handshake(
        &self,
        controller: &ControllerId,
        password: Option<&str>,
        service: &ServiceId,
        request: Permissions,
        session_id: u64,
    ) -> HandshakeRun {
        let pw = password
            .map(str::to_owned)
            .or_else(|| self.controller_passwords.get(controller).cloned())
            .unwrap_or_else(|| "unset".to_owned());
        let mut client = self.realm.client(controller);
        self.realm.handshake(&mut client, &pw, service, request, session_id, &self.clock)
    }
}
