//! Handshake and record layer for inter-node payloads.
//!
//! Four messages: client hello (versions, ordered suites), server select
//! (chosen suite, self-signed certificate, server public key), key exchange
//! (fresh session key sealed to the server key), then sealed records. There
//! is no finished message; the first record that opens serves as
//! confirmation.
//!
//! A record is `seq (8) | direction (1) | data` sealed under the session key,
//! framed on the wire as a 4-byte length and the ciphertext.

use std::fmt;

use thiserror::Error;

use crate::crypto::{
    Aes128Gcm, Aes256Gcm, ChaCha20Poly1305Cipher, CryptoError, CryptoSuite, KeyPair, PublicKey,
    SeededRng, SymmetricKey,
};
use crate::model::Defenses;
use crate::wire::{Decoder, Encoder, WireError};

pub const SUPPORTED_VERSION: &str = "TLS1.2";

pub const SUITE_AES256: &str = "X25519-ED25519-AES256-GCM-SHA256";
pub const SUITE_AES128: &str = "X25519-ED25519-AES128-GCM-SHA256";
pub const SUITE_CHACHA: &str = "X25519-ED25519-CHACHA20-POLY1305-SHA256";

/// Every suite name the registry knows, in default preference order.
pub const KNOWN_SUITES: [&str; 3] = [SUITE_AES256, SUITE_AES128, SUITE_CHACHA];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("suite list is empty")]
    EmptySuiteList,
    #[error("unknown cipher suite `{0}`")]
    UnknownSuite(String),
    #[error("no cipher suite in common")]
    NoCommonSuite,
    #[error("no supported protocol version offered")]
    VersionMismatch,
    #[error("certificate does not verify")]
    BadCertificate,
    #[error("key exchange does not open")]
    DecryptFailure,
    #[error("channel is not secure yet")]
    NotSecure,
    #[error("record failed its integrity check")]
    IntegrityFailure,
    #[error("record sequence number {got} already seen (next expected {expected})")]
    SequenceReplay { got: u64, expected: u64 },
    #[error("record was sent in this endpoint's own direction")]
    Reflected,
    #[error("handshake message out of order in phase {0}")]
    OutOfOrder(ChannelPhase),
    #[error("malformed message: {0}")]
    Malformed(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl ChannelError {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelError::EmptySuiteList => "EmptySuiteList",
            ChannelError::UnknownSuite(_) => "UnknownSuite",
            ChannelError::NoCommonSuite => "NoCommonSuite",
            ChannelError::VersionMismatch => "VersionMismatch",
            ChannelError::BadCertificate => "BadCertificate",
            ChannelError::DecryptFailure => "DecryptFailure",
            ChannelError::NotSecure => "NotSecure",
            ChannelError::IntegrityFailure => "IntegrityFailure",
            ChannelError::SequenceReplay { .. } => "SequenceReplay",
            ChannelError::Reflected => "Reflected",
            ChannelError::OutOfOrder(_) => "OutOfOrder",
            ChannelError::Malformed(_) => "Malformed",
            ChannelError::Crypto(_) => "CryptoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CipherSuiteId(String);

impl CipherSuiteId {
    /// Accepts only names present in the suite registry.
    pub fn new(name: &str) -> Result<Self, ChannelError> {
        if KNOWN_SUITES.contains(&name) {
            Ok(CipherSuiteId(name.to_owned()))
        } else {
            Err(ChannelError::UnknownSuite(name.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn all() -> Vec<CipherSuiteId> {
        KNOWN_SUITES.iter().map(|n| CipherSuiteId(n.to_string())).collect()
    }

    /// The primitives this name stands for.
    pub fn suite(&self) -> CryptoSuite {
        let base = CryptoSuite::default();
        match self.0.as_str() {
            SUITE_AES128 => base.with_cipher(std::sync::Arc::new(Aes128Gcm)),
            SUITE_CHACHA => base.with_cipher(std::sync::Arc::new(ChaCha20Poly1305Cipher)),
            _ => base.with_cipher(std::sync::Arc::new(Aes256Gcm)),
        }
    }
}

impl fmt::Display for CipherSuiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Self-signed binding of a subject to its encryption key. The signature is
/// made with a separate signing key carried in the certificate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub public_key: PublicKey,
    pub verifying_key: PublicKey,
    pub self_signature: Vec<u8>,
}

impl Certificate {
    fn tbs(subject: &str, public_key: &PublicKey, verifying_key: &PublicKey) -> Vec<u8> {
        Encoder::new()
            .str("CERT")
            .str(subject)
            .bytes(public_key.as_bytes())
            .bytes(verifying_key.as_bytes())
            .finish()
    }

    pub fn self_signed(subject: &str, encryption: &PublicKey, signing: &KeyPair, suite: &CryptoSuite) -> Self {
        let tbs = Self::tbs(subject, encryption, &signing.public);
        Certificate {
            subject: subject.to_owned(),
            public_key: encryption.clone(),
            verifying_key: signing.public.clone(),
            self_signature: suite.signature.sign(signing, &tbs),
        }
    }

    pub fn verify(&self, suite: &CryptoSuite) -> bool {
        let tbs = Self::tbs(&self.subject, &self.public_key, &self.verifying_key);
        suite.signature.verify(&self.verifying_key, &tbs, &self.self_signature)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .str(&self.subject)
            .bytes(self.public_key.as_bytes())
            .bytes(self.verifying_key.as_bytes())
            .bytes(&self.self_signature)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(bytes);
        let cert = Certificate {
            subject: d.string()?,
            public_key: PublicKey::from_bytes(d.bytes()?),
            verifying_key: PublicKey::from_bytes(d.bytes()?),
            self_signature: d.bytes()?.to_vec(),
        };
        d.finish()?;
        Ok(cert)
    }
}

/// Server key material: encryption key pair plus the certificate over it.
#[derive(Debug, Clone)]
pub struct ServerIdentity {
    pub keys: KeyPair,
    pub certificate: Certificate,
}

impl ServerIdentity {
    pub fn generate(subject: &str, rng: &SeededRng) -> Self {
        let suite = CryptoSuite::default();
        let keys = suite.public_key.generate(rng);
        let signing = suite.signature.generate(rng);
        let certificate = Certificate::self_signed(subject, &keys.public, &signing, &suite);
        ServerIdentity { keys, certificate }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub versions: Vec<String>,
    pub suites: Vec<CipherSuiteId>,
}

impl ClientHello {
    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .list(self.versions.iter().map(|v| v.as_bytes()))
            .list(self.suites.iter().map(|s| s.as_str().as_bytes()))
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(bytes);
        let utf8 = |b: &[u8]| std::str::from_utf8(b).map(str::to_owned).map_err(|_| WireError::InvalidUtf8);
        let versions = d.list()?.into_iter().map(utf8).collect::<Result<_, _>>()?;
        let suites = d
            .list()?
            .into_iter()
            .map(|b| {
                let name = utf8(b)?;
                CipherSuiteId::new(&name).map_err(|e| WireError::InvalidValue(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        d.finish()?;
        Ok(ClientHello { versions, suites })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerSelect {
    pub version: String,
    pub suite: CipherSuiteId,
    pub certificate: Certificate,
    pub server_key: PublicKey,
}

impl ServerSelect {
    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .str(&self.version)
            .str(self.suite.as_str())
            .bytes(&self.certificate.to_bytes())
            .bytes(self.server_key.as_bytes())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(bytes);
        let version = d.string()?;
        let suite = CipherSuiteId::new(d.str()?).map_err(|e| WireError::InvalidValue(e.to_string()))?;
        let certificate = Certificate::from_bytes(d.bytes()?)?;
        let server_key = PublicKey::from_bytes(d.bytes()?);
        d.finish()?;
        Ok(ServerSelect {
            version,
            suite,
            certificate,
            server_key,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyExchange {
    pub sealed_key: Vec<u8>,
}

impl KeyExchange {
    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new().bytes(&self.sealed_key).finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(bytes);
        let sealed_key = d.bytes()?.to_vec();
        d.finish()?;
        Ok(KeyExchange { sealed_key })
    }
}

pub fn client_hello(versions: &[&str], suites: &[CipherSuiteId]) -> Result<ClientHello, ChannelError> {
    if suites.is_empty() {
        return Err(ChannelError::EmptySuiteList);
    }
    Ok(ClientHello {
        versions: versions.iter().map(|v| v.to_string()).collect(),
        suites: suites.to_vec(),
    })
}

/// First suite in client order that the server also supports.
pub fn negotiate(client: &[CipherSuiteId], server: &[CipherSuiteId]) -> Option<CipherSuiteId> {
    client.iter().find(|s| server.contains(s)).cloned()
}

pub fn server_select(
    hello: &ClientHello,
    server_suites: &[CipherSuiteId],
    identity: &ServerIdentity,
) -> Result<ServerSelect, ChannelError> {
    if hello.suites.is_empty() {
        return Err(ChannelError::EmptySuiteList);
    }
    if !hello.versions.iter().any(|v| v == SUPPORTED_VERSION) {
        return Err(ChannelError::VersionMismatch);
    }
    let suite = negotiate(&hello.suites, server_suites).ok_or(ChannelError::NoCommonSuite)?;
    Ok(ServerSelect {
        version: SUPPORTED_VERSION.to_owned(),
        suite,
        certificate: identity.certificate.clone(),
        server_key: identity.keys.public.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelPhase {
    Hello,
    Negotiated,
    KeyExchanged,
    Secure,
    Failed,
}

impl fmt::Display for ChannelPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

impl Side {
    fn byte(self) -> u8 {
        match self {
            Side::Client => 0,
            Side::Server => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelState {
    pub phase: ChannelPhase,
    pub negotiated: Option<CipherSuiteId>,
    pub session_key: Option<SymmetricKey>,
    pub peer_public_key: Option<PublicKey>,
}

/// One endpoint of a connection.
pub struct Channel {
    side: Side,
    state: ChannelState,
    suite: CryptoSuite,
    rng: SeededRng,
    defenses: Defenses,
    identity: Option<ServerIdentity>,
    server_suites: Vec<CipherSuiteId>,
    pin: Option<PublicKey>,
    send_seq: u64,
    recv_next: u64,
}

impl Channel {
    fn new(side: Side, rng: &SeededRng) -> Self {
        Channel {
            side,
            state: ChannelState {
                phase: ChannelPhase::Hello,
                negotiated: None,
                session_key: None,
                peer_public_key: None,
            },
            suite: CryptoSuite::default(),
            rng: rng.clone(),
            defenses: Defenses::default(),
            identity: None,
            server_suites: Vec::new(),
            pin: None,
            send_seq: 0,
            recv_next: 0,
        }
    }

    pub fn client(rng: &SeededRng) -> Self {
        Channel::new(Side::Client, rng)
    }

    pub fn server(identity: ServerIdentity, suites: Vec<CipherSuiteId>, rng: &SeededRng) -> Self {
        let mut ch = Channel::new(Side::Server, rng);
        ch.identity = Some(identity);
        ch.server_suites = suites;
        ch
    }

    /// Client only: require the server's certified key to equal `key`.
    pub fn pinned(mut self, key: PublicKey) -> Self {
        self.pin = Some(key);
        self
    }

    pub fn with_defenses(mut self, defenses: Defenses) -> Self {
        self.defenses = defenses;
        self
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn phase(&self) -> ChannelPhase {
        self.state.phase
    }

    fn expect(&self, side: Side, phase: ChannelPhase) -> Result<(), ChannelError> {
        if self.side == side && self.state.phase == phase {
            Ok(())
        } else {
            Err(ChannelError::OutOfOrder(self.state.phase))
        }
    }

    fn fail<T>(&mut self, err: ChannelError) -> Result<T, ChannelError> {
        self.state.phase = ChannelPhase::Failed;
        Err(err)
    }

    pub fn hello(&mut self, versions: &[&str], suites: &[CipherSuiteId]) -> Result<ClientHello, ChannelError> {
        self.expect(Side::Client, ChannelPhase::Hello)?;
        client_hello(versions, suites).or_else(|e| self.fail(e))
    }

    pub fn select(&mut self, hello: &ClientHello) -> Result<ServerSelect, ChannelError> {
        self.expect(Side::Server, ChannelPhase::Hello)?;
        let identity = self.identity.as_ref().expect("server channel has an identity");
        match server_select(hello, &self.server_suites, identity) {
            Ok(sel) => {
                self.suite = sel.suite.suite();
                self.state.negotiated = Some(sel.suite.clone());
                self.state.phase = ChannelPhase::Negotiated;
                Ok(sel)
            }
            Err(e) => self.fail(e),
        }
    }

    pub fn key_exchange(&mut self, select: &ServerSelect) -> Result<KeyExchange, ChannelError> {
        self.expect(Side::Client, ChannelPhase::Hello)?;
        let suite = select.suite.suite();
        let cert = &select.certificate;
        let pinned_ok = self.pin.as_ref().is_none_or(|p| *p == cert.public_key);
        if !cert.verify(&suite) || cert.public_key != select.server_key || !pinned_ok {
            return self.fail(ChannelError::BadCertificate);
        }
        let key = suite.random_key(&self.rng);
        let sealed_key = suite
            .public_key
            .encrypt(&select.server_key, key.as_bytes(), &self.rng)?;
        self.suite = suite;
        self.state.negotiated = Some(select.suite.clone());
        self.state.peer_public_key = Some(select.server_key.clone());
        self.state.session_key = Some(key);
        self.state.phase = ChannelPhase::KeyExchanged;
        Ok(KeyExchange { sealed_key })
    }

    /// Client only: the key exchange was delivered, start sending records.
    pub fn confirm(&mut self) -> Result<(), ChannelError> {
        self.expect(Side::Client, ChannelPhase::KeyExchanged)?;
        self.state.phase = ChannelPhase::Secure;
        Ok(())
    }

    pub fn finish(&mut self, kx: &KeyExchange) -> Result<(), ChannelError> {
        self.expect(Side::Server, ChannelPhase::Negotiated)?;
        let identity = self.identity.as_ref().expect("server channel has an identity");
        let key = match self.suite.public_key.decrypt(&identity.keys, &kx.sealed_key) {
            Ok(k) if k.len() == self.suite.cipher.key_len() => k,
            _ => return self.fail(ChannelError::DecryptFailure),
        };
        self.state.session_key = Some(SymmetricKey::from_bytes(key));
        self.state.phase = ChannelPhase::Secure;
        Ok(())
    }

    pub fn seal(&mut self, data: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if self.state.phase != ChannelPhase::Secure {
            return Err(ChannelError::NotSecure);
        }
        let mut plain = Vec::with_capacity(9 + data.len());
        plain.extend_from_slice(&self.send_seq.to_be_bytes());
        plain.push(self.side.byte());
        plain.extend_from_slice(data);
        self.send_seq += 1;
        let body = if self.defenses.record_encryption {
            let key = self.state.session_key.as_ref().expect("secure implies key");
            self.suite.encrypt(key, &plain, &self.rng)?
        } else {
            plain
        };
        let mut out = (body.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn open(&mut self, record: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if self.state.phase != ChannelPhase::Secure {
            return Err(ChannelError::NotSecure);
        }
        if record.len() < 4 {
            return Err(WireError::Truncated.into());
        }
        let len = u32::from_be_bytes(record[..4].try_into().unwrap()) as usize;
        let body = &record[4..];
        if body.len() != len {
            return Err(ChannelError::IntegrityFailure);
        }
        let plain = if self.defenses.record_encryption {
            let key = self.state.session_key.as_ref().expect("secure implies key");
            self.suite
                .decrypt(key, body)
                .map_err(|_| ChannelError::IntegrityFailure)?
        } else {
            body.to_vec()
        };
        if plain.len() < 9 {
            return Err(ChannelError::IntegrityFailure);
        }
        let seq = u64::from_be_bytes(plain[..8].try_into().unwrap());
        if plain[8] == self.side.byte() {
            return Err(ChannelError::Reflected);
        }
        if self.defenses.record_sequence && seq < self.recv_next {
            return Err(ChannelError::SequenceReplay {
                got: seq,
                expected: self.recv_next,
            });
        }
        self.recv_next = self.recv_next.max(seq + 1);
        Ok(plain[9..].to_vec())
    }
}

/// Runs the four-step handshake between two fresh endpoints in process.
pub fn connect(
    client: &mut Channel,
    server: &mut Channel,
    client_suites: &[CipherSuiteId],
) -> Result<(), ChannelError> {
    let hello = client.hello(&[SUPPORTED_VERSION], client_suites)?;
    let select = server.select(&hello)?;
    let kx = client.key_exchange(&select)?;
    server.finish(&kx)?;
    client.confirm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(names: &[&str]) -> Vec<CipherSuiteId> {
        names.iter().map(|n| CipherSuiteId::new(n).unwrap()).collect()
    }

    fn pair(seed: u64) -> (Channel, Channel, SeededRng) {
        let rng = SeededRng::from_seed(seed);
        let id = ServerIdentity::generate("dbs", &rng);
        let server = Channel::server(id, CipherSuiteId::all(), &rng);
        (Channel::client(&rng), server, rng)
    }

    #[test]
    fn hello_validation() {
        assert_eq!(client_hello(&["TLS1.2"], &[]), Err(ChannelError::EmptySuiteList));
        let h = client_hello(&["TLS1.2"], &ids(&[SUITE_AES128, SUITE_AES256])).unwrap();
        assert_eq!(h.suites, ids(&[SUITE_AES128, SUITE_AES256]));
        assert_eq!(ClientHello::from_bytes(&h.to_bytes()).unwrap(), h);
        assert!(CipherSuiteId::new("ECDHE-RSA-RC4").is_err());
    }

    #[test]
    fn selection_rules() {
        let rng = SeededRng::from_seed(1);
        let id = ServerIdentity::generate("s", &rng);
        let (a, b) = (SUITE_AES256, SUITE_CHACHA);
        let hello = client_hello(&["TLS1.2"], &ids(&[a, b])).unwrap();
        assert_eq!(server_select(&hello, &ids(&[b]), &id).unwrap().suite.as_str(), b);
        assert_eq!(server_select(&hello, &ids(&[b, a]), &id).unwrap().suite.as_str(), a);
        let hello_a = client_hello(&["TLS1.2"], &ids(&[a])).unwrap();
        assert_eq!(server_select(&hello_a, &ids(&[b]), &id), Err(ChannelError::NoCommonSuite));
        let old = client_hello(&["TLS1.0"], &ids(&[a])).unwrap();
        assert_eq!(server_select(&old, &ids(&[a]), &id), Err(ChannelError::VersionMismatch));
    }

    #[test]
    fn full_handshake_and_records() {
        for suite in KNOWN_SUITES {
            let (mut c, mut s, _) = pair(2);
            connect(&mut c, &mut s, &ids(&[suite])).unwrap();
            assert_eq!(c.state().session_key, s.state().session_key);
            assert_eq!(s.state().session_key.as_ref().unwrap().as_bytes().len(), suite_key_len(suite));
            let r = c.seal(b"hello").unwrap();
            assert_eq!(s.open(&r).unwrap(), b"hello");
            let r = s.seal(b"back").unwrap();
            assert_eq!(c.open(&r).unwrap(), b"back");
        }
    }

    fn suite_key_len(name: &str) -> usize {
        if name == SUITE_AES128 {
            16
        } else {
            32
        }
    }

    #[test]
    fn seal_before_handshake() {
        let (mut c, mut s, _) = pair(3);
        assert_eq!(c.seal(b"x"), Err(ChannelError::NotSecure));
        let hello = c.hello(&["TLS1.2"], &CipherSuiteId::all()).unwrap();
        let sel = s.select(&hello).unwrap();
        assert_eq!(s.seal(b"x"), Err(ChannelError::NotSecure));
        c.key_exchange(&sel).unwrap();
        assert_eq!(c.phase(), ChannelPhase::KeyExchanged);
        assert_eq!(c.seal(b"x"), Err(ChannelError::NotSecure));
    }

    #[test]
    fn bad_certificate() {
        let (mut c, mut s, rng) = pair(4);
        let hello = c.hello(&["TLS1.2"], &CipherSuiteId::all()).unwrap();
        let mut sel = s.select(&hello).unwrap();
        sel.certificate.self_signature[0] ^= 1;
        assert_eq!(c.key_exchange(&sel), Err(ChannelError::BadCertificate));
        assert_eq!(c.phase(), ChannelPhase::Failed);

        // valid certificate for a different key than the one offered
        let (mut c, mut s, _) = pair(4);
        let hello = c.hello(&["TLS1.2"], &CipherSuiteId::all()).unwrap();
        let mut sel = s.select(&hello).unwrap();
        sel.server_key = ServerIdentity::generate("mallory", &rng).keys.public;
        assert_eq!(c.key_exchange(&sel), Err(ChannelError::BadCertificate));

        // pin mismatch
        let (c, mut s, _) = pair(4);
        let mut c = c.pinned(ServerIdentity::generate("other", &rng).keys.public);
        let hello = c.hello(&["TLS1.2"], &CipherSuiteId::all()).unwrap();
        let sel = s.select(&hello).unwrap();
        assert_eq!(c.key_exchange(&sel), Err(ChannelError::BadCertificate));
    }

    #[test]
    fn key_exchange_failures() {
        let (mut c, mut s, rng) = pair(5);
        let hello = c.hello(&["TLS1.2"], &CipherSuiteId::all()).unwrap();
        let sel = s.select(&hello).unwrap();
        let mut kx = c.key_exchange(&sel).unwrap();
        kx.sealed_key[40] ^= 0x80;
        assert_eq!(s.finish(&kx), Err(ChannelError::DecryptFailure));

        let (mut c, mut s, _) = pair(5);
        let hello = c.hello(&["TLS1.2"], &CipherSuiteId::all()).unwrap();
        let sel = s.select(&hello).unwrap();
        c.key_exchange(&sel).unwrap();
        let other = ServerIdentity::generate("other", &rng).keys.public;
        let sealed_key = CryptoSuite::default()
            .public_key
            .encrypt(&other, &[0u8; 32], &rng)
            .unwrap();
        assert_eq!(s.finish(&KeyExchange { sealed_key }), Err(ChannelError::DecryptFailure));
    }

    #[test]
    fn distinct_session_keys_under_one_certificate() {
        let rng = SeededRng::from_seed(6);
        let id = ServerIdentity::generate("dbs", &rng);
        let mut keys = Vec::new();
        for _ in 0..2 {
            let mut c = Channel::client(&rng);
            let mut s = Channel::server(id.clone(), CipherSuiteId::all(), &rng);
            connect(&mut c, &mut s, &CipherSuiteId::all()).unwrap();
            keys.push(c.state().session_key.clone().unwrap());
        }
        assert_ne!(keys[0], keys[1]);
    }

    #[test]
    fn record_replay_and_reflection() {
        let (mut c, mut s, _) = pair(7);
        connect(&mut c, &mut s, &CipherSuiteId::all()).unwrap();
        let r0 = c.seal(b"zero").unwrap();
        let r1 = c.seal(b"one").unwrap();
        assert_eq!(s.open(&r0).unwrap(), b"zero");
        assert_eq!(s.open(&r1).unwrap(), b"one");
        assert!(matches!(s.open(&r0), Err(ChannelError::SequenceReplay { got: 0, expected: 2 })));
        assert_eq!(c.open(&r1), Err(ChannelError::Reflected));
        let mut bad = c.seal(b"two").unwrap();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert_eq!(s.open(&bad), Err(ChannelError::IntegrityFailure));
    }

    #[test]
    fn sequence_check_can_be_disabled() {
        let rng = SeededRng::from_seed(8);
        let off = Defenses {
            record_sequence: false,
            ..Defenses::default()
        };
        let id = ServerIdentity::generate("dbs", &rng);
        let mut s = Channel::server(id, CipherSuiteId::all(), &rng).with_defenses(off);
        let mut c = Channel::client(&rng).with_defenses(off);
        connect(&mut c, &mut s, &CipherSuiteId::all()).unwrap();
        let r = c.seal(b"again").unwrap();
        assert!(s.open(&r).is_ok());
        assert!(s.open(&r).is_ok());
    }

    proptest! {
        #[test]
        fn records_hide_payload(data in proptest::collection::vec(any::<u8>(), 4..64)) {
            let (mut c, mut s, _) = pair(9);
            connect(&mut c, &mut s, &CipherSuiteId::all()).unwrap();
            let r = c.seal(&data).unwrap();
            prop_assert!(!r.windows(4).any(|w| data.windows(4).any(|d| d == w)));
            prop_assert_eq!(s.open(&r).unwrap(), data);
        }
    }
}
