//! Server side of the ticketing protocol: the Kerberos center (AS + TGS) and
//! the database service endpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use super::messages::{MaPlain, Mc, MdPlain, MePlain, MfPlain, MgPlain, MhPlain, TicketPlain};
use super::{EstablishedSession, ProtocolError};
use crate::clock::{Clock, Timestamp};
use crate::crypto::{CryptoSuite, SeededRng, SymmetricKey};
use crate::directory::{Directory, DirectoryError, Permissions};
use crate::model::{ControllerId, Defenses, ServiceId};

/// 5 minutes.
pub const DEFAULT_TICKET_TTL_MS: u64 = 5 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsReply {
    pub m_a: Vec<u8>,
    pub m_b: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TgsReply {
    pub m_e: Vec<u8>,
    pub m_f: Vec<u8>,
}

/// What the TGS knows after checking a ticket and its authenticator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthenticatedContext {
    pub controller_id: ControllerId,
    pub ts_c: Timestamp,
    pub tgs_session_key: SymmetricKey,
    pub service: ServiceId,
    pub request: Permissions,
}

fn expired(defenses: &Defenses, now: Timestamp, issued: Timestamp, ttl_ms: u64) -> bool {
    defenses.ticket_expiry && now.since(issued) >= ttl_ms
}

pub struct KerberosCenter {
    directory: Arc<Directory>,
    suite: CryptoSuite,
    rng: SeededRng,
    tgs_key: SymmetricKey,
    service_keys: BTreeMap<ServiceId, SymmetricKey>,
    ticket_ttl_ms: u64,
    defenses: Defenses,
}

impl KerberosCenter {
    pub fn new(directory: Arc<Directory>, suite: CryptoSuite, rng: &SeededRng) -> Self {
        let tgs_key = suite.random_key(rng);
        KerberosCenter {
            directory,
            suite,
            rng: rng.clone(),
            tgs_key,
            service_keys: BTreeMap::new(),
            ticket_ttl_ms: DEFAULT_TICKET_TTL_MS,
            defenses: Defenses::default(),
        }
    }

    pub fn with_ticket_ttl(mut self, ttl_ms: u64) -> Self {
        self.ticket_ttl_ms = ttl_ms;
        self
    }

    pub fn with_defenses(mut self, defenses: Defenses) -> Self {
        self.defenses = defenses;
        self
    }

    pub fn ticket_ttl_ms(&self) -> u64 {
        self.ticket_ttl_ms
    }

    pub fn directory(&self) -> &Arc<Directory> {
        &self.directory
    }

    /// Provisions a fresh out-of-band key for `service` and returns the
    /// matching endpoint.
    pub fn provision_service(&mut self, service: ServiceId) -> DatabaseService {
        let key = self.suite.random_key(&self.rng);
        self.service_keys.insert(service.clone(), key.clone());
        DatabaseService {
            service,
            key,
            suite: self.suite.clone(),
            rng: self.rng.clone(),
            ticket_ttl_ms: self.ticket_ttl_ms,
            defenses: self.defenses,
            consumed: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn services(&self) -> Vec<ServiceId> {
        self.service_keys.keys().cloned().collect()
    }

    pub fn as_handle_request(
        &self,
        id_c: &ControllerId,
        clock: &Clock,
    ) -> Result<AsReply, ProtocolError> {
        let cred = self
            .directory
            .credential(id_c)
            .ok_or_else(|| ProtocolError::UnknownController(id_c.to_string()))?;
        let ts_c = clock.now();
        let tgs_session_key = self.suite.random_key(&self.rng);
        let ticket = TicketPlain {
            controller_id: id_c.clone(),
            ts_c,
            session_key: tgs_session_key.clone(),
        };
        let m_b = self.suite.encrypt(&self.tgs_key, &ticket.to_bytes(), &self.rng)?;
        let ma = MaPlain {
            tgs_session_key,
            ts_c,
        };
        let m_a = self.suite.encrypt(&cred.secret_key, &ma.to_bytes(), &self.rng)?;
        Ok(AsReply { m_a, m_b })
    }

    pub fn tgs_authenticate(
        &self,
        m_c: &[u8],
        m_d: &[u8],
        clock: &Clock,
    ) -> Result<AuthenticatedContext, ProtocolError> {
        let mc = Mc::from_bytes(m_c)?;
        let ticket = self
            .suite
            .decrypt(&self.tgs_key, &mc.ticket)
            .map_err(|_| ProtocolError::TicketDecryptFailure)?;
        let ticket = TicketPlain::from_bytes(&ticket)?;
        let auth = self
            .suite
            .decrypt(&ticket.session_key, m_d)
            .map_err(|_| ProtocolError::TicketDecryptFailure)?;
        let auth = MdPlain::from_bytes(&auth)?;
        if auth.controller_id != ticket.controller_id {
            return Err(ProtocolError::IdentityMismatch);
        }
        if expired(&self.defenses, clock.now(), ticket.ts_c, self.ticket_ttl_ms) {
            return Err(ProtocolError::TicketExpired);
        }
        if let Some((service, request)) = &auth.bound_request {
            if *service != mc.service || *request != mc.request {
                return Err(ProtocolError::RequestMismatch);
            }
        }
        Ok(AuthenticatedContext {
            controller_id: ticket.controller_id,
            ts_c: ticket.ts_c,
            tgs_session_key: ticket.session_key,
            service: mc.service,
            request: mc.request,
        })
    }

    pub fn tgs_authorize(
        &self,
        ctx: &AuthenticatedContext,
        clock: &Clock,
    ) -> Result<TgsReply, ProtocolError> {
        let service_key = self.service_keys.get(&ctx.service).ok_or_else(|| {
            ProtocolError::rejected("UnknownService", ctx.service.as_str())
        })?;
        if self.defenses.dac {
            let collection = ctx.service.as_str();
            match self.directory.check_request(&ctx.controller_id, collection, ctx.request) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(ProtocolError::rejected(
                        "DacDenied",
                        &format!("{} lacks {} on {}", ctx.controller_id, ctx.request, collection),
                    ))
                }
                Err(DirectoryError::EmptyRequest) => {
                    return Err(ProtocolError::rejected("EmptyRequest", "no permission requested"))
                }
                Err(e) => return Err(ProtocolError::rejected("DirectoryError", &e.to_string())),
            }
        } else if ctx.request.is_empty() {
            return Err(ProtocolError::rejected("EmptyRequest", "no permission requested"));
        }
        let ts_c_dbs = clock.now();
        let dbs_key = self.suite.random_key(&self.rng);
        let me = MePlain {
            controller_id: ctx.controller_id.clone(),
            ts_c_dbs,
            session_key: dbs_key.clone(),
            service: ctx.service.clone(),
            granted: ctx.request,
        };
        let mf = MfPlain {
            session_key: dbs_key,
            ts_c_dbs,
            controller_id: ctx.controller_id.clone(),
        };
        Ok(TgsReply {
            m_e: self.suite.encrypt(service_key, &me.to_bytes(), &self.rng)?,
            m_f: self.suite.encrypt(&ctx.tgs_session_key, &mf.to_bytes(), &self.rng)?,
        })
    }
}

/// Endpoint in front of one collection. Remembers every ticket it has
/// accepted so a second presentation is refused.
pub struct DatabaseService {
    service: ServiceId,
    key: SymmetricKey,
    suite: CryptoSuite,
    rng: SeededRng,
    ticket_ttl_ms: u64,
    defenses: Defenses,
    consumed: Mutex<BTreeSet<Vec<u8>>>,
}

impl DatabaseService {
    pub fn service(&self) -> &ServiceId {
        &self.service
    }

    pub fn dbs_verify(
        &self,
        m_e: &[u8],
        m_g: &[u8],
        clock: &Clock,
    ) -> Result<(Vec<u8>, EstablishedSession), ProtocolError> {
        let me_bytes = self
            .suite
            .decrypt(&self.key, m_e)
            .map_err(|_| ProtocolError::DecryptFailure)?;
        let me = MePlain::from_bytes(&me_bytes)?;
        let mg = self
            .suite
            .decrypt(&me.session_key, m_g)
            .map_err(|_| ProtocolError::DecryptFailure)?;
        let mg = MgPlain::from_bytes(&mg)?;
        if mg.controller_id != me.controller_id || me.service != self.service {
            return Err(ProtocolError::IdentityMismatch);
        }
        if mg.ts_c_dbs != me.ts_c_dbs {
            return Err(ProtocolError::TimestampMismatch);
        }
        let now = clock.now();
        if expired(&self.defenses, now, me.ts_c_dbs, self.ticket_ttl_ms) {
            return Err(ProtocolError::TicketExpired);
        }
        if self.defenses.timestamp_reuse {
            let fingerprint = self.suite.hash.digest(&me_bytes);
            let mut consumed = self.consumed.lock().expect("replay cache poisoned");
            if !consumed.insert(fingerprint) {
                return Err(ProtocolError::TimestampMismatch);
            }
        }
        let mh = MhPlain {
            ts_c_dbs: me.ts_c_dbs,
        };
        let m_h = self.suite.encrypt(&me.session_key, &mh.to_bytes(), &self.rng)?;
        let expires_at = if self.defenses.ticket_expiry {
            me.ts_c_dbs.saturating_add(self.ticket_ttl_ms)
        } else {
            Timestamp(u64::MAX)
        };
        let session = EstablishedSession {
            controller_id: me.controller_id,
            service: me.service,
            granted: me.granted,
            session_key: me.session_key,
            ts_c_dbs: me.ts_c_dbs,
            expires_at,
        };
        Ok((m_h, session))
    }
}
