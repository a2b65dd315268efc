//! Kerberos-style controller authentication and authorisation.
//!
//! ```text
//! controller -> AS   AS_REQ(ID_c)
//! AS -> controller   M_A = Enc_Kc(S_K_TGS, TS_c)
//!                    M_B = Enc_PK_TGS(ID_c, TS_c, S_K_TGS)
//! controller -> TGS  M_C = (M_B, ID_DBS, Req)
//!                    M_D = Enc_S_K_TGS(ID_c, TS_c)
//! TGS -> controller  M_E = Enc_PK_DBS(ID_c, TS_c_DBS, S_K_DBS, ID_DBS, Req)
//!                    M_F = Enc_S_K_TGS(S_K_DBS, TS_c_DBS, ID_c)
//! controller -> DBS  M_E, M_G = Enc_S_K_DBS(ID_c, TS_c_DBS)
//! DBS -> controller  M_H = Enc_S_K_DBS(TS_c_DBS)
//! ```
//!
//! Any server-side failure is answered with a `REJECT` envelope.

pub mod client;
pub mod messages;
pub mod server;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use client::{ControllerClient, SessionState};
pub use server::{
    AsReply, AuthenticatedContext, DatabaseService, KerberosCenter, TgsReply,
    DEFAULT_TICKET_TTL_MS,
};

use crate::clock::{Clock, Timestamp};
use crate::crypto::{CryptoError, CryptoSuite, SeededRng, SymmetricKey};
use crate::directory::{Directory, Permission, Permissions};
use crate::model::{ControllerId, Defenses, ServiceId};
use crate::wire::{Envelope, Tag, WireError};

use messages::RejectBody;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    AwaitAS,
    AwaitTGS,
    AwaitDBS,
    Established,
    Failed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("controller `{0}` is not registered")]
    UnknownController(String),
    #[error("M_A does not open under the derived key")]
    WrongPassword,
    #[error("ticket or authenticator does not open")]
    TicketDecryptFailure,
    #[error("identities do not match")]
    IdentityMismatch,
    #[error("ticket expired")]
    TicketExpired,
    #[error("request differs from the one bound in the authenticator")]
    RequestMismatch,
    #[error("rejected: {error} ({detail})")]
    Rejected { error: String, detail: String },
    #[error("message does not open under the session key")]
    DecryptFailure,
    #[error("timestamps do not match or were already used")]
    TimestampMismatch,
    #[error("message not valid in phase {actual}, expected {expected}")]
    InvalidPhase { expected: Phase, actual: Phase },
    #[error("malformed message: {0}")]
    Malformed(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl ProtocolError {
    pub fn rejected(error: &str, detail: &str) -> Self {
        ProtocolError::Rejected {
            error: error.to_owned(),
            detail: detail.to_owned(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolError::UnknownController(_) => "UnknownController",
            ProtocolError::WrongPassword => "WrongPassword",
            ProtocolError::TicketDecryptFailure => "TicketDecryptFailure",
            ProtocolError::IdentityMismatch => "IdentityMismatch",
            ProtocolError::TicketExpired => "TicketExpired",
            ProtocolError::RequestMismatch => "RequestMismatch",
            ProtocolError::Rejected { .. } => "Reject",
            ProtocolError::DecryptFailure => "DecryptFailure",
            ProtocolError::TimestampMismatch => "TimestampMismatch",
            ProtocolError::InvalidPhase { .. } => "InvalidPhase",
            ProtocolError::Malformed(_) => "Malformed",
            ProtocolError::Crypto(_) => "CryptoError",
        }
    }

    /// Body of the `REJECT` envelope a server answers this error with.
    pub fn reject_body(&self) -> Vec<u8> {
        let (error, detail) = match self {
            ProtocolError::Rejected { error, detail } => (error.clone(), detail.clone()),
            other => (other.name().to_owned(), other.to_string()),
        };
        RejectBody { error, detail }.to_bytes()
    }
}

/// Where in the exchange a message is processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    AsLookup,
    OpenMa,
    TgsAuthenticate,
    TgsAuthorize,
    OpenMf,
    DbsVerify,
    OpenMh,
}

impl Step {
    pub fn label(self) -> &'static str {
        match self {
            Step::AsLookup => "as.lookup",
            Step::OpenMa => "controller.open_m_a",
            Step::TgsAuthenticate => "tgs.authenticate",
            Step::TgsAuthorize => "tgs.authorize",
            Step::OpenMf => "controller.open_m_f",
            Step::DbsVerify => "dbs.verify",
            Step::OpenMh => "controller.open_m_h",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A session both ends hold after a successful exchange. Only the protocol
/// can construct one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EstablishedSession {
    pub(crate) controller_id: ControllerId,
    pub(crate) service: ServiceId,
    pub(crate) granted: Permissions,
    pub(crate) session_key: SymmetricKey,
    pub(crate) ts_c_dbs: Timestamp,
    pub(crate) expires_at: Timestamp,
}

impl EstablishedSession {
    pub fn controller_id(&self) -> &ControllerId {
        &self.controller_id
    }

    pub fn service(&self) -> &ServiceId {
        &self.service
    }

    pub fn granted(&self) -> Permissions {
        self.granted
    }

    pub fn allows(&self, p: Permission) -> bool {
        self.granted.contains(p)
    }

    pub fn session_key(&self) -> &SymmetricKey {
        &self.session_key
    }

    pub fn ts_c_dbs(&self) -> Timestamp {
        self.ts_c_dbs
    }

    pub fn expires_at(&self) -> Timestamp {
        self.expires_at
    }

    pub fn is_live(&self, now: Timestamp) -> bool {
        now < self.expires_at
    }
}

pub fn node_as() -> String {
    "as".to_owned()
}

pub fn node_tgs() -> String {
    "tgs".to_owned()
}

pub fn node_dbs(service: &ServiceId) -> String {
    format!("dbs:{service}")
}

pub fn node_controller(id: &ControllerId) -> String {
    format!("controller:{id}")
}

/// One envelope in a handshake transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub from: String,
    pub to: String,
    pub envelope: Envelope,
}

#[derive(Debug, Clone)]
pub struct HandshakeRun {
    pub hops: Vec<Hop>,
    pub client_phase: Phase,
    pub result: Result<(EstablishedSession, EstablishedSession), (Step, ProtocolError)>,
}

impl HandshakeRun {
    pub fn is_established(&self) -> bool {
        self.result.is_ok()
    }

    pub fn failure(&self) -> Option<&(Step, ProtocolError)> {
        self.result.as_ref().err()
    }
}

/// The Kerberos center plus one database service per provisioned collection.
pub struct Realm {
    pub center: KerberosCenter,
    pub services: BTreeMap<ServiceId, DatabaseService>,
    suite: CryptoSuite,
    rng: SeededRng,
}

impl Realm {
    pub fn new(
        directory: Arc<Directory>,
        suite: CryptoSuite,
        rng: &SeededRng,
        ticket_ttl_ms: u64,
        defenses: Defenses,
        services: impl IntoIterator<Item = ServiceId>,
    ) -> Self {
        let mut center = KerberosCenter::new(directory, suite.clone(), rng)
            .with_ticket_ttl(ticket_ttl_ms)
            .with_defenses(defenses);
        let services = services
            .into_iter()
            .map(|s| (s.clone(), center.provision_service(s)))
            .collect();
        Realm {
            center,
            services,
            suite,
            rng: rng.clone(),
        }
    }

    pub fn suite(&self) -> &CryptoSuite {
        &self.suite
    }

    pub fn client(&self, controller: &ControllerId) -> ControllerClient {
        ControllerClient::new(controller.clone(), self.suite.clone(), &self.rng)
    }

    /// Drives one complete exchange in process, recording every envelope.
    pub fn handshake(
        &self,
        client: &mut ControllerClient,
        password: &str,
        service: &ServiceId,
        request: Permissions,
        session_id: u64,
        clock: &Clock,
    ) -> HandshakeRun {
        let mut hops = Vec::new();
        let result = self.drive(client, password, service, request, session_id, clock, &mut hops);
        HandshakeRun {
            hops,
            client_phase: client.phase(),
            result,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn drive(
        &self,
        client: &mut ControllerClient,
        password: &str,
        service: &ServiceId,
        request: Permissions,
        sid: u64,
        clock: &Clock,
        hops: &mut Vec<Hop>,
    ) -> Result<(EstablishedSession, EstablishedSession), (Step, ProtocolError)> {
        let me = node_controller(&client.state().controller_id);
        let mut send = |from: &str, to: &str, tag: Tag, body: Vec<u8>| {
            hops.push(Hop {
                from: from.to_owned(),
                to: to.to_owned(),
                envelope: Envelope::new(tag, sid, body),
            });
        };
        let dbs_node = node_dbs(service);

        let as_req = client.start().map_err(|e| (Step::AsLookup, e))?;
        send(&me, &node_as(), Tag::AsRequest, as_req);
        let id = client.state().controller_id.clone();
        let reply = match self.center.as_handle_request(&id, clock) {
            Ok(r) => r,
            Err(e) => {
                send(&node_as(), &me, Tag::Reject, e.reject_body());
                client.handle_reject(&e.reject_body());
                return Err((Step::AsLookup, e));
            }
        };
        send(&node_as(), &me, Tag::MA, reply.m_a.clone());
        send(&node_as(), &me, Tag::MB, reply.m_b.clone());

        let (m_c, m_d) = client
            .handle_as_reply(&reply.m_a, &reply.m_b, password, service, request)
            .map_err(|e| (Step::OpenMa, e))?;
        send(&me, &node_tgs(), Tag::MC, m_c.clone());
        send(&me, &node_tgs(), Tag::MD, m_d.clone());

        let tgs = self
            .center
            .tgs_authenticate(&m_c, &m_d, clock)
            .map_err(|e| (Step::TgsAuthenticate, e))
            .and_then(|ctx| {
                self.center
                    .tgs_authorize(&ctx, clock)
                    .map_err(|e| (Step::TgsAuthorize, e))
            });
        let reply = match tgs {
            Ok(r) => r,
            Err((step, e)) => {
                send(&node_tgs(), &me, Tag::Reject, e.reject_body());
                client.handle_reject(&e.reject_body());
                return Err((step, e));
            }
        };
        send(&node_tgs(), &me, Tag::ME, reply.m_e.clone());
        send(&node_tgs(), &me, Tag::MF, reply.m_f.clone());

        let m_g = client
            .handle_tgs_reply(&reply.m_f)
            .map_err(|e| (Step::OpenMf, e))?;
        send(&me, &dbs_node, Tag::ME, reply.m_e.clone());
        send(&me, &dbs_node, Tag::MG, m_g.clone());

        let verified = match self.services.get(service) {
            Some(dbs) => dbs.dbs_verify(&reply.m_e, &m_g, clock),
            None => Err(ProtocolError::rejected("UnknownService", service.as_str())),
        };
        let (m_h, server_session) = match verified {
            Ok(v) => v,
            Err(e) => {
                send(&dbs_node, &me, Tag::Reject, e.reject_body());
                client.handle_reject(&e.reject_body());
                return Err((Step::DbsVerify, e));
            }
        };
        send(&dbs_node, &me, Tag::MH, m_h.clone());

        let client_session = client
            .handle_dbs_reply(&m_h)
            .map_err(|e| (Step::OpenMh, e))?;
        Ok((client_session, server_session))
    }
}
