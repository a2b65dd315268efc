//! Signed, time-bounded user tokens.
//!
//! A token is `header | payload | signature`, where the signature covers the
//! canonical header bytes followed by the canonical payload bytes. The wire
//! form is the three parts base64url-encoded (no padding) and joined by `.`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use thiserror::Error;

use crate::clock::{Clock, Timestamp};
use crate::crypto::{CryptoSuite, KeyPair, PublicKey, SeededRng};
use crate::model::{Role, UserCredential, UserId};
use crate::registry::UserRegistry;
use crate::wire::{Decoder, Encoder, WireError};

/// 120 minutes.
pub const DEFAULT_TOKEN_TTL_MS: u64 = 120 * 60 * 1000;
pub const DEFAULT_ISSUER: &str = "ehr-guard-auth";
pub const TOKEN_TYPE: &str = "JWT";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("unknown user")]
    UnknownUser,
    #[error("wrong password")]
    WrongPassword,
    #[error("token signature does not verify")]
    BadSignature,
    #[error("token expired")]
    Expired,
    #[error("token roles do not cover `{0}`")]
    RoleNotCovered(Role),
    #[error("malformed token: {0}")]
    Malformed(String),
}

impl AuthError {
    pub fn name(&self) -> &'static str {
        match self {
            AuthError::UnknownUser => "UnknownUser",
            AuthError::WrongPassword => "WrongPassword",
            AuthError::BadSignature => "BadSignature",
            AuthError::Expired => "Expired",
            AuthError::RoleNotCovered(_) => "RoleNotCovered",
            AuthError::Malformed(_) => "Malformed",
        }
    }
}

impl From<WireError> for AuthError {
    fn from(e: WireError) -> Self {
        AuthError::Malformed(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenHeader {
    pub alg: String,
    pub typ: String,
}

impl TokenHeader {
    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new().str(&self.alg).str(&self.typ).finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(bytes);
        let header = TokenHeader {
            alg: d.string()?,
            typ: d.string()?,
        };
        d.finish()?;
        Ok(header)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPayload {
    pub roles: Vec<Role>,
    pub issuer: String,
    pub user_id: UserId,
    pub expires_at: Timestamp,
    pub version: u64,
    pub issued_at: Timestamp,
}

impl TokenPayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .list(self.roles.iter().map(|r| r.as_str()))
            .str(&self.issuer)
            .str(self.user_id.as_str())
            .u64(self.expires_at.as_millis())
            .u64(self.version)
            .u64(self.issued_at.as_millis())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(bytes);
        let roles = d
            .list()?
            .into_iter()
            .map(|r| {
                std::str::from_utf8(r)
                    .map_err(|_| WireError::InvalidUtf8)?
                    .parse::<Role>()
                    .map_err(|e| WireError::InvalidValue(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let issuer = d.string()?;
        let user_id =
            UserId::new(d.string()?).map_err(|e| WireError::InvalidValue(e.to_string()))?;
        let payload = TokenPayload {
            roles,
            issuer,
            user_id,
            expires_at: Timestamp(d.u64()?),
            version: d.u64()?,
            issued_at: Timestamp(d.u64()?),
        };
        d.finish()?;
        Ok(payload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedToken {
    pub header: TokenHeader,
    pub payload: TokenPayload,
    pub signature: Vec<u8>,
}

impl SignedToken {
    /// The bytes the signature covers: canonical header then canonical payload.
    pub fn signing_input(header: &TokenHeader, payload: &TokenPayload) -> Vec<u8> {
        let mut out = header.to_bytes();
        out.extend_from_slice(&payload.to_bytes());
        out
    }

    pub fn to_wire(&self) -> String {
        format!(
            "{}.{}.{}",
            URL_SAFE_NO_PAD.encode(self.header.to_bytes()),
            URL_SAFE_NO_PAD.encode(self.payload.to_bytes()),
            URL_SAFE_NO_PAD.encode(&self.signature)
        )
    }

    pub fn from_wire(s: &str) -> Result<Self, AuthError> {
        let parts: Vec<&str> = s.split('.').collect();
        let [h, p, sig] = parts.as_slice() else {
            return Err(AuthError::Malformed("expected three dot-separated parts".into()));
        };
        let decode = |part: &str| {
            URL_SAFE_NO_PAD
                .decode(part)
                .map_err(|e| AuthError::Malformed(e.to_string()))
        };
        Ok(SignedToken {
            header: TokenHeader::from_bytes(&decode(h)?)?,
            payload: TokenPayload::from_bytes(&decode(p)?)?,
            signature: decode(sig)?,
        })
    }
}

/// Mints and checks tokens for the users of one registry.
pub struct TokenService {
    suite: CryptoSuite,
    keys: KeyPair,
    issuer: String,
    ttl_ms: u64,
    registry: Arc<UserRegistry>,
    versions: Mutex<BTreeMap<UserId, u64>>,
}

impl TokenService {
    pub fn new(suite: CryptoSuite, registry: Arc<UserRegistry>, rng: &SeededRng) -> Self {
        let keys = suite.signature.generate(rng);
        TokenService {
            suite,
            keys,
            issuer: DEFAULT_ISSUER.to_owned(),
            ttl_ms: DEFAULT_TOKEN_TTL_MS,
            registry,
            versions: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_ttl(mut self, ttl_ms: u64) -> Self {
        assert!(ttl_ms > 0, "token ttl must be positive");
        self.ttl_ms = ttl_ms;
        self
    }

    pub fn with_issuer(mut self, issuer: impl Into<String>) -> Self {
        self.issuer = issuer.into();
        self
    }

    pub fn ttl_ms(&self) -> u64 {
        self.ttl_ms
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keys.public
    }

    pub fn registry(&self) -> &Arc<UserRegistry> {
        &self.registry
    }

    fn header(&self) -> TokenHeader {
        TokenHeader {
            alg: self.suite.signature.name().to_owned(),
            typ: TOKEN_TYPE.to_owned(),
        }
    }

    /// Signs a token for `credential` issued at `issued_at`.
    pub fn mint(&self, credential: &UserCredential, issued_at: Timestamp, version: u64) -> SignedToken {
        let header = self.header();
        let payload = TokenPayload {
            roles: credential.roles.clone(),
            issuer: self.issuer.clone(),
            user_id: credential.user_id.clone(),
            expires_at: issued_at.saturating_add(self.ttl_ms),
            version,
            issued_at,
        };
        let signature = self
            .suite
            .signature
            .sign(&self.keys, &SignedToken::signing_input(&header, &payload));
        SignedToken {
            header,
            payload,
            signature,
        }
    }

    fn bump_version(&self, user: &UserId, at_least: u64) -> u64 {
        let mut versions = self.versions.lock().expect("versions poisoned");
        let slot = versions.entry(user.clone()).or_insert(0);
        let next = (*slot + 1).max(at_least);
        *slot = next;
        next
    }

    pub fn authenticate_user(
        &self,
        username: &str,
        password: &str,
        clock: &Clock,
    ) -> Result<SignedToken, AuthError> {
        let credential = self
            .registry
            .credential_by_username(username)
            .ok_or(AuthError::UnknownUser)?;
        if !credential.password_hash.matches(password) {
            return Err(AuthError::WrongPassword);
        }
        let version = self.bump_version(&credential.user_id, 1);
        Ok(self.mint(&credential, clock.now(), version))
    }

    fn check_signature(&self, token: &SignedToken) -> Result<(), AuthError> {
        if token.header != self.header() || token.payload.issuer != self.issuer {
            return Err(AuthError::BadSignature);
        }
        let input = SignedToken::signing_input(&token.header, &token.payload);
        if self
            .suite
            .signature
            .verify(&self.keys.public, &input, &token.signature)
        {
            Ok(())
        } else {
            Err(AuthError::BadSignature)
        }
    }

    /// Returns the payload iff the signature verifies and `now < expires_at`.
    pub fn verify_token(&self, token: &SignedToken, clock: &Clock) -> Result<TokenPayload, AuthError> {
        self.check_signature(token)?;
        if clock.now() >= token.payload.expires_at {
            return Err(AuthError::Expired);
        }
        Ok(token.payload.clone())
    }

    /// Parses a wire token; anything that fails to parse is not authentic.
    pub fn verify_wire(&self, wire: &str, clock: &Clock) -> Result<TokenPayload, AuthError> {
        let token = SignedToken::from_wire(wire).map_err(|_| AuthError::BadSignature)?;
        self.verify_token(&token, clock)
    }

    /// Issues a fresh token from an authentic one, expired or not. The new
    /// version is exactly one more than the presented token's.
    pub fn renew_token(&self, old: &SignedToken, clock: &Clock) -> Result<SignedToken, AuthError> {
        self.check_signature(old)?;
        let credential = self
            .registry
            .credential(&old.payload.user_id)
            .ok_or(AuthError::UnknownUser)?;
        let version = old.payload.version + 1;
        self.bump_version(&credential.user_id, version);
        Ok(self.mint(&credential, clock.now(), version))
    }

    /// Checks, in order: signature, expiry, role coverage.
    pub fn authorize_request(
        &self,
        token: &SignedToken,
        required_role: Role,
        clock: &Clock,
    ) -> Result<TokenPayload, AuthError> {
        let payload = self.verify_token(token, clock)?;
        if !payload.roles.contains(&required_role) {
            return Err(AuthError::RoleNotCovered(required_role));
        }
        Ok(payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OrgId, OrgKind};
    use crate::registry::OrgRecord;

    const MIN: u64 = 60_000;

    fn setup() -> (TokenService, Clock) {
        let rng = SeededRng::from_seed(11);
        let reg = Arc::new(UserRegistry::new());
        let clinic = OrgId::new("clinic-x", OrgKind::Clinic).unwrap();
        let school = OrgId::new("school-y", OrgKind::School).unwrap();
        reg.add_org(OrgRecord::with_default_admins(clinic.clone())).unwrap();
        reg.add_org(OrgRecord::with_default_admins(school.clone())).unwrap();
        let alice = UserCredential::new(
            "u-alice".into(),
            "alice",
            "alice-pw",
            vec![Role::Clinician],
            clinic,
            &rng,
        )
        .unwrap();
        let tom =
            UserCredential::new("u-tom".into(), "tom", "tom-pw", vec![Role::Teacher], school, &rng)
                .unwrap();
        reg.add_user(alice, None, None).unwrap();
        reg.add_user(tom, None, None).unwrap();
        let svc = TokenService::new(CryptoSuite::default(), reg, &rng);
        (svc, Clock::manual(Timestamp(0)))
    }

    #[test]
    fn login_sets_two_hour_expiry() {
        let (svc, clock) = setup();
        let token = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        assert_eq!(token.payload.issued_at, Timestamp(0));
        assert_eq!(token.payload.expires_at, Timestamp(7_200_000));
        assert_eq!(token.payload.roles, vec![Role::Clinician]);
        assert_eq!(token.payload.user_id, UserId::from("u-alice"));
        assert_eq!(token.payload.issuer, DEFAULT_ISSUER);
        assert_eq!(token.payload.version, 1);
        assert_eq!(token.header.typ, "JWT");
        assert_eq!(token.header.alg, "EdDSA");
    }

    #[test]
    fn login_failures() {
        let (svc, clock) = setup();
        assert_eq!(
            svc.authenticate_user("alice", "nope", &clock),
            Err(AuthError::WrongPassword)
        );
        assert_eq!(
            svc.authenticate_user("mallory", "x", &clock),
            Err(AuthError::UnknownUser)
        );
    }

    #[test]
    fn tokens_one_millisecond_apart_differ() {
        let (svc, clock) = setup();
        let a = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        clock.advance(1);
        let b = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        assert_ne!(a.payload.issued_at, b.payload.issued_at);
        assert_ne!(a.signature, b.signature);
        assert_ne!(a.to_wire(), b.to_wire());
    }

    #[test]
    fn verify_and_expire() {
        let (svc, clock) = setup();
        let token = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        clock.advance(MIN);
        assert!(svc.verify_token(&token, &clock).is_ok());
        clock.advance(120 * MIN);
        assert_eq!(svc.verify_token(&token, &clock), Err(AuthError::Expired));
    }

    #[test]
    fn tampered_payload_is_bad_signature() {
        let (svc, clock) = setup();
        let mut token = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        token.payload.expires_at = Timestamp(u64::MAX);
        assert_eq!(svc.verify_token(&token, &clock), Err(AuthError::BadSignature));
    }

    #[test]
    fn flipped_wire_byte_never_verifies() {
        let (svc, clock) = setup();
        let token = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        let payload = token.payload.to_bytes();
        for i in 0..payload.len() {
            let mut bytes = payload.clone();
            bytes[i] ^= 0x01;
            let wire = format!(
                "{}.{}.{}",
                URL_SAFE_NO_PAD.encode(token.header.to_bytes()),
                URL_SAFE_NO_PAD.encode(&bytes),
                URL_SAFE_NO_PAD.encode(&token.signature)
            );
            assert_eq!(svc.verify_wire(&wire, &clock), Err(AuthError::BadSignature), "byte {i}");
        }
    }

    #[test]
    fn wire_roundtrip() {
        let (svc, clock) = setup();
        let token = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        let wire = token.to_wire();
        assert_eq!(wire.matches('.').count(), 2);
        assert_eq!(SignedToken::from_wire(&wire).unwrap(), token);
        assert!(matches!(
            SignedToken::from_wire("abc"),
            Err(AuthError::Malformed(_))
        ));
    }

    #[test]
    fn foreign_issuer_key_rejected() {
        let (svc, clock) = setup();
        let other = TokenService::new(
            CryptoSuite::default(),
            svc.registry().clone(),
            &SeededRng::from_seed(99),
        );
        let token = other.authenticate_user("alice", "alice-pw", &clock).unwrap();
        assert_eq!(svc.verify_token(&token, &clock), Err(AuthError::BadSignature));
    }

    #[test]
    fn renewal() {
        let (svc, clock) = setup();
        let token = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        clock.advance(121 * MIN);
        assert_eq!(svc.verify_token(&token, &clock), Err(AuthError::Expired));
        let renewed = svc.renew_token(&token, &clock).unwrap();
        assert_eq!(renewed.payload.version, token.payload.version + 1);
        assert_eq!(renewed.payload.user_id, token.payload.user_id);
        assert_eq!(renewed.payload.roles, token.payload.roles);
        assert_eq!(renewed.payload.issued_at, clock.now());
        assert!(svc.verify_token(&renewed, &clock).is_ok());
        let twice = svc.renew_token(&renewed, &clock).unwrap();
        assert_eq!(twice.payload.version, token.payload.version + 2);

        let mut forged = token.clone();
        forged.payload.version = 40;
        assert_eq!(svc.renew_token(&forged, &clock), Err(AuthError::BadSignature));

        svc.registry().remove_user(&"u-alice".into());
        assert_eq!(svc.renew_token(&token, &clock), Err(AuthError::UnknownUser));
    }

    #[test]
    fn role_checks_and_precedence() {
        let (svc, clock) = setup();
        let alice = svc.authenticate_user("alice", "alice-pw", &clock).unwrap();
        let tom = svc.authenticate_user("tom", "tom-pw", &clock).unwrap();
        assert!(svc.authorize_request(&alice, Role::Clinician, &clock).is_ok());
        assert_eq!(
            svc.authorize_request(&tom, Role::Clinician, &clock),
            Err(AuthError::RoleNotCovered(Role::Clinician))
        );
        clock.advance(120 * MIN);
        // expired and lacking the role: expiry wins
        assert_eq!(
            svc.authorize_request(&tom, Role::Clinician, &clock),
            Err(AuthError::Expired)
        );
        let mut forged = tom.clone();
        forged.payload.roles = vec![Role::Clinician];
        assert_eq!(
            svc.authorize_request(&forged, Role::Clinician, &clock),
            Err(AuthError::BadSignature)
        );
    }
}
