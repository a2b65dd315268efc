//! Controller side of the ticketing protocol.

use super::messages::{AsRequest, MaPlain, Mc, MdPlain, MfPlain, MgPlain, MhPlain, RejectBody};
use super::{EstablishedSession, Phase, ProtocolError};
use crate::clock::Timestamp;
use crate::crypto::{CryptoSuite, SeededRng, SymmetricKey};
use crate::directory::Permissions;
use crate::model::{ControllerId, ServiceId};

#[derive(Debug, Clone)]
pub struct SessionState {
    pub phase: Phase,
    pub controller_id: ControllerId,
    pub tgs_session_key: Option<SymmetricKey>,
    pub dbs_session_key: Option<SymmetricKey>,
    pub ts_c: Option<Timestamp>,
    pub ts_c_dbs: Option<Timestamp>,
    pub service: Option<ServiceId>,
    pub request: Option<Permissions>,
}

pub struct ControllerClient {
    state: SessionState,
    suite: CryptoSuite,
    rng: SeededRng,
    bind_request: bool,
}

impl ControllerClient {
    pub fn new(controller_id: ControllerId, suite: CryptoSuite, rng: &SeededRng) -> Self {
        ControllerClient {
            state: SessionState {
                phase: Phase::Init,
                controller_id,
                tgs_session_key: None,
                dbs_session_key: None,
                ts_c: None,
                ts_c_dbs: None,
                service: None,
                request: None,
            },
            suite,
            rng: rng.clone(),
            bind_request: false,
        }
    }

    /// Also seal the (service, request) pair inside M_D so the TGS can detect
    /// an M_C whose request was rewritten in transit.
    pub fn binding_request(mut self, bind: bool) -> Self {
        self.bind_request = bind;
        self
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    fn expect(&self, phase: Phase) -> Result<(), ProtocolError> {
        if self.state.phase == phase {
            Ok(())
        } else {
            Err(ProtocolError::InvalidPhase {
                expected: phase,
                actual: self.state.phase,
            })
        }
    }

    fn fail(&mut self, err: ProtocolError) -> ProtocolError {
        self.state.phase = Phase::Failed;
        err
    }

    pub fn start(&mut self) -> Result<Vec<u8>, ProtocolError> {
        self.expect(Phase::Init)?;
        self.state.phase = Phase::AwaitAS;
        Ok(AsRequest {
            controller_id: self.state.controller_id.clone(),
        }
        .to_bytes())
    }

    /// Opens M_A with the key derived from `password` and builds (M_C, M_D).
    pub fn handle_as_reply(
        &mut self,
        m_a: &[u8],
        m_b: &[u8],
        password: &str,
        service: &ServiceId,
        request: Permissions,
    ) -> Result<(Vec<u8>, Vec<u8>), ProtocolError> {
        self.expect(Phase::AwaitAS)?;
        self.build_tgs_request(m_a, m_b, password, service, request)
            .map_err(|e| self.fail(e))
    }

    fn build_tgs_request(
        &mut self,
        m_a: &[u8],
        m_b: &[u8],
        password: &str,
        service: &ServiceId,
        request: Permissions,
    ) -> Result<(Vec<u8>, Vec<u8>), ProtocolError> {
        let k_c = self
            .suite
            .key_derive(password)
            .map_err(|_| ProtocolError::WrongPassword)?;
        let ma = self
            .suite
            .decrypt(&k_c, m_a)
            .map_err(|_| ProtocolError::WrongPassword)?;
        let ma = MaPlain::from_bytes(&ma)?;
        let mc = Mc {
            ticket: m_b.to_vec(),
            service: service.clone(),
            request,
        };
        let md = MdPlain {
            controller_id: self.state.controller_id.clone(),
            ts_c: ma.ts_c,
            bound_request: self.bind_request.then(|| (service.clone(), request)),
        };
        let m_d = self
            .suite
            .encrypt(&ma.tgs_session_key, &md.to_bytes(), &self.rng)?;
        self.state.tgs_session_key = Some(ma.tgs_session_key);
        self.state.ts_c = Some(ma.ts_c);
        self.state.service = Some(service.clone());
        self.state.request = Some(request);
        self.state.phase = Phase::AwaitTGS;
        Ok((mc.to_bytes(), m_d))
    }

    /// A rejection from any server ends the session.
    pub fn handle_reject(&mut self, body: &[u8]) -> ProtocolError {
        let err = match RejectBody::from_bytes(body) {
            Ok(r) => ProtocolError::Rejected {
                error: r.error,
                detail: r.detail,
            },
            Err(e) => e.into(),
        };
        self.fail(err)
    }

    /// Opens M_F and builds M_G. M_E is opaque to the controller and is
    /// forwarded unchanged.
    pub fn handle_tgs_reply(&mut self, m_f: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        self.expect(Phase::AwaitTGS)?;
        self.build_dbs_request(m_f).map_err(|e| self.fail(e))
    }

    fn build_dbs_request(&mut self, m_f: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        let tgs_key = self.state.tgs_session_key.clone().expect("set in AwaitTGS");
        let mf = self
            .suite
            .decrypt(&tgs_key, m_f)
            .map_err(|_| ProtocolError::DecryptFailure)?;
        let mf = MfPlain::from_bytes(&mf)?;
        if mf.controller_id != self.state.controller_id {
            return Err(ProtocolError::IdentityMismatch);
        }
        let mg = MgPlain {
            controller_id: self.state.controller_id.clone(),
            ts_c_dbs: mf.ts_c_dbs,
        };
        let m_g = self.suite.encrypt(&mf.session_key, &mg.to_bytes(), &self.rng)?;
        self.state.dbs_session_key = Some(mf.session_key);
        self.state.ts_c_dbs = Some(mf.ts_c_dbs);
        self.state.phase = Phase::AwaitDBS;
        Ok(m_g)
    }

    /// Opens M_H and checks the echoed timestamp, which authenticates the
    /// database service to the controller.
    pub fn handle_dbs_reply(&mut self, m_h: &[u8]) -> Result<EstablishedSession, ProtocolError> {
        self.expect(Phase::AwaitDBS)?;
        self.finish(m_h).map_err(|e| self.fail(e))
    }

    fn finish(&mut self, m_h: &[u8]) -> Result<EstablishedSession, ProtocolError> {
        let key = self.state.dbs_session_key.clone().expect("set in AwaitDBS");
        let ts = self.state.ts_c_dbs.expect("set in AwaitDBS");
        let mh = self
            .suite
            .decrypt(&key, m_h)
            .map_err(|_| ProtocolError::DecryptFailure)?;
        let mh = MhPlain::from_bytes(&mh)?;
        if mh.ts_c_dbs != ts {
            return Err(ProtocolError::TimestampMismatch);
        }
        self.state.phase = Phase::Established;
        Ok(EstablishedSession {
            controller_id: self.state.controller_id.clone(),
            service: self.state.service.clone().expect("set in AwaitTGS"),
            granted: self.state.request.expect("set in AwaitTGS"),
            session_key: key,
            ts_c_dbs: ts,
            expires_at: Timestamp(u64::MAX),
        })
    }
}
