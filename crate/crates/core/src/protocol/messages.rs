//! Plaintext schemas for the ticketing messages.
//!
//! Every schema starts with its tag name, so a body decoded under the wrong
//! schema fails even when the field layout happens to line up.

use crate::clock::Timestamp;
use crate::crypto::SymmetricKey;
use crate::directory::Permissions;
use crate::model::{ControllerId, ServiceId};
use crate::wire::{Decoder, Encoder, Tag, WireError};

fn framed(tag: Tag) -> Encoder {
    Encoder::new().str(tag.name())
}

fn unframe(tag: Tag, bytes: &[u8]) -> Result<Decoder<'_>, WireError> {
    let mut d = Decoder::new(bytes);
    let label = d.str()?;
    if label != tag.name() {
        return Err(WireError::InvalidValue(format!(
            "expected {} body, found `{label}`",
            tag.name()
        )));
    }
    Ok(d)
}

fn controller(d: &mut Decoder<'_>) -> Result<ControllerId, WireError> {
    ControllerId::new(d.string()?).map_err(|e| WireError::InvalidValue(e.to_string()))
}

fn service(d: &mut Decoder<'_>) -> Result<ServiceId, WireError> {
    ServiceId::new(d.string()?).map_err(|e| WireError::InvalidValue(e.to_string()))
}

fn key(d: &mut Decoder<'_>) -> Result<SymmetricKey, WireError> {
    Ok(SymmetricKey::from_bytes(d.bytes()?))
}

fn perms(d: &mut Decoder<'_>) -> Result<Permissions, WireError> {
    d.str()?
        .parse()
        .map_err(|e: crate::directory::DirectoryError| WireError::InvalidValue(e.to_string()))
}

/// Unencrypted opening message naming the controller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsRequest {
    pub controller_id: ControllerId,
}

impl AsRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::AsRequest).str(self.controller_id.as_str()).finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::AsRequest, bytes)?;
        let controller_id = controller(&mut d)?;
        d.finish()?;
        Ok(AsRequest { controller_id })
    }
}

/// M_A plaintext, sealed under the controller key. Carries TS_c so the
/// controller can build M_D.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaPlain {
    pub tgs_session_key: SymmetricKey,
    pub ts_c: Timestamp,
}

impl MaPlain {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::MA)
            .bytes(self.tgs_session_key.as_bytes())
            .u64(self.ts_c.as_millis())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::MA, bytes)?;
        let tgs_session_key = key(&mut d)?;
        let ts_c = Timestamp(d.u64()?);
        d.finish()?;
        Ok(MaPlain {
            tgs_session_key,
            ts_c,
        })
    }
}

/// Service ticket for the TGS (M_B plaintext), sealed under the TGS key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketPlain {
    pub controller_id: ControllerId,
    pub ts_c: Timestamp,
    pub session_key: SymmetricKey,
}

impl TicketPlain {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::MB)
            .str(self.controller_id.as_str())
            .u64(self.ts_c.as_millis())
            .bytes(self.session_key.as_bytes())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::MB, bytes)?;
        let controller_id = controller(&mut d)?;
        let ts_c = Timestamp(d.u64()?);
        let session_key = key(&mut d)?;
        d.finish()?;
        Ok(TicketPlain {
            controller_id,
            ts_c,
            session_key,
        })
    }
}

/// M_C travels in the clear: the opaque TGS ticket, the target service and
/// the requested permissions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mc {
    pub ticket: Vec<u8>,
    pub service: ServiceId,
    pub request: Permissions,
}

impl Mc {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::MC)
            .bytes(&self.ticket)
            .str(self.service.as_str())
            .str(&self.request.to_string())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::MC, bytes)?;
        let ticket = d.bytes()?.to_vec();
        let service = service(&mut d)?;
        let request = perms(&mut d)?;
        d.finish()?;
        Ok(Mc {
            ticket,
            service,
            request,
        })
    }
}

/// M_D plaintext (the authenticator), sealed under S_K_TGS. `bound_request`
/// is set only when the client binds its request into the authenticator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdPlain {
    pub controller_id: ControllerId,
    pub ts_c: Timestamp,
    pub bound_request: Option<(ServiceId, Permissions)>,
}

impl MdPlain {
    pub fn to_bytes(&self) -> Vec<u8> {
        let bound: Vec<Vec<u8>> = match &self.bound_request {
            Some((s, p)) => vec![s.as_str().as_bytes().to_vec(), p.to_string().into_bytes()],
            None => vec![],
        };
        framed(Tag::MD)
            .str(self.controller_id.as_str())
            .u64(self.ts_c.as_millis())
            .list(bound)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::MD, bytes)?;
        let controller_id = controller(&mut d)?;
        let ts_c = Timestamp(d.u64()?);
        let items = d.list()?;
        d.finish()?;
        let bound_request = match items.as_slice() {
            [] => None,
            [s, p] => {
                let s = std::str::from_utf8(s).map_err(|_| WireError::InvalidUtf8)?;
                let p = std::str::from_utf8(p).map_err(|_| WireError::InvalidUtf8)?;
                let s = ServiceId::new(s).map_err(|e| WireError::InvalidValue(e.to_string()))?;
                let p = p.parse().map_err(|e: crate::directory::DirectoryError| {
                    WireError::InvalidValue(e.to_string())
                })?;
                Some((s, p))
            }
            _ => return Err(WireError::InvalidValue("bound request needs 2 items".into())),
        };
        Ok(MdPlain {
            controller_id,
            ts_c,
            bound_request,
        })
    }
}

/// Ticket for the database service (M_E plaintext), sealed under that
/// service's key. The granted request rides along as authorisation data so
/// the service can enforce it per operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MePlain {
    pub controller_id: ControllerId,
    pub ts_c_dbs: Timestamp,
    pub session_key: SymmetricKey,
    pub service: ServiceId,
    pub granted: Permissions,
}

impl MePlain {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::ME)
            .str(self.controller_id.as_str())
            .u64(self.ts_c_dbs.as_millis())
            .bytes(self.session_key.as_bytes())
            .str(self.service.as_str())
            .str(&self.granted.to_string())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::ME, bytes)?;
        let controller_id = controller(&mut d)?;
        let ts_c_dbs = Timestamp(d.u64()?);
        let session_key = key(&mut d)?;
        let service = service(&mut d)?;
        let granted = perms(&mut d)?;
        d.finish()?;
        Ok(MePlain {
            controller_id,
            ts_c_dbs,
            session_key,
            service,
            granted,
        })
    }
}

/// M_F plaintext, sealed under S_K_TGS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MfPlain {
    pub session_key: SymmetricKey,
    pub ts_c_dbs: Timestamp,
    pub controller_id: ControllerId,
}

impl MfPlain {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::MF)
            .bytes(self.session_key.as_bytes())
            .u64(self.ts_c_dbs.as_millis())
            .str(self.controller_id.as_str())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::MF, bytes)?;
        let session_key = key(&mut d)?;
        let ts_c_dbs = Timestamp(d.u64()?);
        let controller_id = controller(&mut d)?;
        d.finish()?;
        Ok(MfPlain {
            session_key,
            ts_c_dbs,
            controller_id,
        })
    }
}

/// M_G plaintext, sealed under S_K_DBS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MgPlain {
    pub controller_id: ControllerId,
    pub ts_c_dbs: Timestamp,
}

impl MgPlain {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::MG)
            .str(self.controller_id.as_str())
            .u64(self.ts_c_dbs.as_millis())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::MG, bytes)?;
        let controller_id = controller(&mut d)?;
        let ts_c_dbs = Timestamp(d.u64()?);
        d.finish()?;
        Ok(MgPlain {
            controller_id,
            ts_c_dbs,
        })
    }
}

/// M_H plaintext, sealed under S_K_DBS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MhPlain {
    pub ts_c_dbs: Timestamp,
}

impl MhPlain {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::MH).u64(self.ts_c_dbs.as_millis()).finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::MH, bytes)?;
        let ts_c_dbs = Timestamp(d.u64()?);
        d.finish()?;
        Ok(MhPlain { ts_c_dbs })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectBody {
    pub error: String,
    pub detail: String,
}

impl RejectBody {
    pub fn to_bytes(&self) -> Vec<u8> {
        framed(Tag::Reject).str(&self.error).str(&self.detail).finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = unframe(Tag::Reject, bytes)?;
        let error = d.string()?;
        let detail = d.string()?;
        d.finish()?;
        Ok(RejectBody { error, detail })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips() {
        let k = SymmetricKey::from_bytes(vec![7u8; 32]);
        let ma = MaPlain {
            tgs_session_key: k.clone(),
            ts_c: Timestamp(5),
        };
        assert_eq!(MaPlain::from_bytes(&ma.to_bytes()).unwrap(), ma);
        let md = MdPlain {
            controller_id: "portal".into(),
            ts_c: Timestamp(9),
            bound_request: Some(("clinic".into(), Permissions::RW)),
        };
        assert_eq!(MdPlain::from_bytes(&md.to_bytes()).unwrap(), md);
        let me = MePlain {
            controller_id: "portal".into(),
            ts_c_dbs: Timestamp(1),
            session_key: k,
            service: "clinic".into(),
            granted: Permissions::R,
        };
        assert_eq!(MePlain::from_bytes(&me.to_bytes()).unwrap(), me);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        // M_G and M_D share a field layout when nothing is bound
        let mg = MgPlain {
            controller_id: "portal".into(),
            ts_c_dbs: Timestamp(3),
        };
        assert!(MdPlain::from_bytes(&mg.to_bytes()).is_err());
        assert!(MhPlain::from_bytes(&mg.to_bytes()).is_err());
        let mh = MhPlain { ts_c_dbs: Timestamp(3) };
        assert!(MgPlain::from_bytes(&mh.to_bytes()).is_err());
    }

    #[test]
    fn mc_layout() {
        let mc = Mc {
            ticket: vec![0xaa, 0xbb],
            service: "clinic".into(),
            request: Permissions::R,
        };
        let expected = [
            &[0, 0, 0, 3][..],
            b"M_C",
            &[0, 0, 0, 2, 0xaa, 0xbb],
            &[0, 0, 0, 6],
            b"clinic",
            &[0, 0, 0, 1],
            b"R",
        ]
        .concat();
        assert_eq!(mc.to_bytes(), expected);
        assert_eq!(Mc::from_bytes(&expected).unwrap(), mc);
    }
}
