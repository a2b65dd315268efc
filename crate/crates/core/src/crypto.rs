//! Pluggable cryptographic contracts and the default suite backing them.
//!
//! Keys travel as byte strings so the contracts stay object safe; each scheme
//! validates key lengths on use. The default suite is Ed25519 signatures,
//! AES-256-GCM, an X25519 sealed box for public-key encryption, and SHA-256.

use std::fmt;
use std::sync::{Arc, Mutex};

use aes_gcm::aead::{Aead, KeyInit};
use chacha20poly1305::ChaCha20Poly1305;
use ed25519_dalek::{Signer, Verifier};
use hkdf::Hkdf;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("integrity check failed")]
    IntegrityFailure,
    #[error("key has length {actual}, expected {expected}")]
    InvalidKey { expected: usize, actual: usize },
    #[error("password must not be empty")]
    EmptyPassword,
}

/// The single seedable randomness source for a scenario. Clones share state.
#[derive(Clone)]
pub struct SeededRng(Arc<Mutex<ChaCha20Rng>>);

impl SeededRng {
    pub fn from_seed(seed: u64) -> Self {
        SeededRng(Arc::new(Mutex::new(ChaCha20Rng::seed_from_u64(seed))))
    }

    pub fn fill(&self, dest: &mut [u8]) {
        self.0.lock().expect("rng poisoned").fill_bytes(dest);
    }

    pub fn bytes(&self, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n];
        self.fill(&mut out);
        out
    }

    pub fn array<const N: usize>(&self) -> [u8; N] {
        let mut out = [0u8; N];
        self.fill(&mut out);
        out
    }

    pub fn next_u64(&self) -> u64 {
        self.0.lock().expect("rng poisoned").next_u64()
    }

    /// Uniform in `0..bound`. `bound` must be non-zero.
    pub fn below(&self, bound: u64) -> u64 {
        assert!(bound > 0);
        // bias is negligible for the small bounds used in scenarios
        self.next_u64() % bound
    }
}

impl fmt::Debug for SeededRng {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SeededRng(..)")
    }
}

macro_rules! secret_bytes {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, Hash)]
        pub struct $name(Vec<u8>);

        impl $name {
            pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
                $name(bytes.into())
            }

            pub fn as_bytes(&self) -> &[u8] {
                &self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "(<{} bytes>)"), self.0.len())
            }
        }
    };
}

secret_bytes!(
    /// Symmetric key for a [`SymmetricCipher`].
    SymmetricKey
);
secret_bytes!(SecretKey);

/// Public half of a signing or encryption key pair.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PublicKey(Vec<u8>);

impl PublicKey {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        PublicKey(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0))
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

pub trait SignatureScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn generate(&self, rng: &SeededRng) -> KeyPair;
    fn sign(&self, key: &KeyPair, message: &[u8]) -> Vec<u8>;
    fn verify(&self, public: &PublicKey, message: &[u8], signature: &[u8]) -> bool;
}

/// Authenticated symmetric encryption. Decryption under a wrong key or of a
/// modified ciphertext fails with [`CryptoError::IntegrityFailure`].
pub trait SymmetricCipher: Send + Sync {
    fn name(&self) -> &'static str;
    fn key_len(&self) -> usize;
    fn encrypt(
        &self,
        key: &SymmetricKey,
        plaintext: &[u8],
        rng: &SeededRng,
    ) -> Result<Vec<u8>, CryptoError>;
    fn decrypt(&self, key: &SymmetricKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError>;
}

pub trait PublicKeyCipher: Send + Sync {
    fn name(&self) -> &'static str;
    fn generate(&self, rng: &SeededRng) -> KeyPair;
    fn encrypt(
        &self,
        recipient: &PublicKey,
        plaintext: &[u8],
        rng: &SeededRng,
    ) -> Result<Vec<u8>, CryptoError>;
    fn decrypt(&self, key: &KeyPair, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError>;
}

pub trait HashFunction: Send + Sync {
    fn name(&self) -> &'static str;
    fn digest(&self, data: &[u8]) -> Vec<u8>;
}

fn check_len(key: &[u8], expected: usize) -> Result<(), CryptoError> {
    if key.len() == expected {
        Ok(())
    } else {
        Err(CryptoError::InvalidKey {
            expected,
            actual: key.len(),
        })
    }
}

pub struct Ed25519;

impl SignatureScheme for Ed25519 {
    fn name(&self) -> &'static str {
        "EdDSA"
    }

    fn generate(&self, rng: &SeededRng) -> KeyPair {
        let seed: [u8; 32] = rng.array();
        let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
        KeyPair {
            secret: SecretKey(seed.to_vec()),
            public: PublicKey(sk.verifying_key().to_bytes().to_vec()),
        }
    }

    fn sign(&self, key: &KeyPair, message: &[u8]) -> Vec<u8> {
        let seed: [u8; 32] = key
            .secret
            .as_bytes()
            .try_into()
            .expect("ed25519 secret is 32 bytes");
        ed25519_dalek::SigningKey::from_bytes(&seed)
            .sign(message)
            .to_bytes()
            .to_vec()
    }

    fn verify(&self, public: &PublicKey, message: &[u8], signature: &[u8]) -> bool {
        let Ok(pk_bytes) = <[u8; 32]>::try_from(public.as_bytes()) else {
            return false;
        };
        let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&pk_bytes) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        vk.verify(message, &sig).is_ok()
    }
}

const NONCE_LEN: usize = 12;

fn aead_seal<C: KeyInit + Aead>(
    key: &SymmetricKey,
    key_len: usize,
    plaintext: &[u8],
    rng: &SeededRng,
) -> Result<Vec<u8>, CryptoError> {
    check_len(key.as_bytes(), key_len)?;
    let cipher = C::new_from_slice(key.as_bytes()).map_err(|_| CryptoError::InvalidKey {
        expected: key_len,
        actual: key.as_bytes().len(),
    })?;
    let nonce: [u8; NONCE_LEN] = rng.array();
    let ct = cipher
        .encrypt(aes_gcm::aead::Nonce::<C>::from_slice(&nonce), plaintext)
        .map_err(|_| CryptoError::IntegrityFailure)?;
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    Ok(out)
}

fn aead_open<C: KeyInit + Aead>(
    key: &SymmetricKey,
    key_len: usize,
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    check_len(key.as_bytes(), key_len)?;
    if ciphertext.len() < NONCE_LEN {
        return Err(CryptoError::IntegrityFailure);
    }
    let cipher = C::new_from_slice(key.as_bytes()).map_err(|_| CryptoError::IntegrityFailure)?;
    let (nonce, ct) = ciphertext.split_at(NONCE_LEN);
    cipher
        .decrypt(aes_gcm::aead::Nonce::<C>::from_slice(nonce), ct)
        .map_err(|_| CryptoError::IntegrityFailure)
}

macro_rules! aead_cipher {
    ($name:ident, $inner:ty, $label:literal, $key_len:literal) => {
        pub struct $name;

        impl SymmetricCipher for $name {
            fn name(&self) -> &'static str {
                $label
            }

            fn key_len(&self) -> usize {
                $key_len
            }

            fn encrypt(
                &self,
                key: &SymmetricKey,
                plaintext: &[u8],
                rng: &SeededRng,
            ) -> Result<Vec<u8>, CryptoError> {
                aead_seal::<$inner>(key, $key_len, plaintext, rng)
            }

            fn decrypt(
                &self,
                key: &SymmetricKey,
                ciphertext: &[u8],
            ) -> Result<Vec<u8>, CryptoError> {
                aead_open::<$inner>(key, $key_len, ciphertext)
            }
        }
    };
}

aead_cipher!(Aes256Gcm, aes_gcm::Aes256Gcm, "AES256-GCM", 32);
aead_cipher!(Aes128Gcm, aes_gcm::Aes128Gcm, "AES128-GCM", 16);
aead_cipher!(ChaCha20Poly1305Cipher, ChaCha20Poly1305, "CHACHA20-POLY1305", 32);

/// X25519 key agreement with an ephemeral sender key, HKDF-SHA256 and
/// AES-256-GCM. Ciphertext layout: ephemeral public key (32) | nonce | sealed.
pub struct X25519SealedBox;

impl X25519SealedBox {
    fn derive(shared: &[u8; 32], ephemeral: &[u8], recipient: &[u8]) -> SymmetricKey {
        let mut salt = Vec::with_capacity(64);
        salt.extend_from_slice(ephemeral);
        salt.extend_from_slice(recipient);
        let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
        let mut okm = [0u8; 32];
        hk.expand(b"ehr-guard sealed box", &mut okm)
            .expect("32 bytes is a valid hkdf length");
        SymmetricKey(okm.to_vec())
    }
}

impl PublicKeyCipher for X25519SealedBox {
    fn name(&self) -> &'static str {
        "X25519-SEALED-BOX"
    }

    fn generate(&self, rng: &SeededRng) -> KeyPair {
        let secret = x25519_dalek::StaticSecret::from(rng.array::<32>());
        let public = x25519_dalek::PublicKey::from(&secret);
        KeyPair {
            secret: SecretKey(secret.to_bytes().to_vec()),
            public: PublicKey(public.as_bytes().to_vec()),
        }
    }

    fn encrypt(
        &self,
        recipient: &PublicKey,
        plaintext: &[u8],
        rng: &SeededRng,
    ) -> Result<Vec<u8>, CryptoError> {
        check_len(recipient.as_bytes(), 32)?;
        let recipient_bytes: [u8; 32] = recipient.as_bytes().try_into().unwrap();
        let ephemeral = x25519_dalek::StaticSecret::from(rng.array::<32>());
        let ephemeral_pub = x25519_dalek::PublicKey::from(&ephemeral);
        let shared = ephemeral.diffie_hellman(&x25519_dalek::PublicKey::from(recipient_bytes));
        if !shared.was_contributory() {
            return Err(CryptoError::IntegrityFailure);
        }
        let key = Self::derive(shared.as_bytes(), ephemeral_pub.as_bytes(), &recipient_bytes);
        let sealed = Aes256Gcm.encrypt(&key, plaintext, rng)?;
        let mut out = ephemeral_pub.as_bytes().to_vec();
        out.extend_from_slice(&sealed);
        Ok(out)
    }

    fn decrypt(&self, key: &KeyPair, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        check_len(key.secret.as_bytes(), 32)?;
        if ciphertext.len() < 32 {
            return Err(CryptoError::IntegrityFailure);
        }
        let (eph, sealed) = ciphertext.split_at(32);
        let eph: [u8; 32] = eph.try_into().unwrap();
        let secret_bytes: [u8; 32] = key.secret.as_bytes().try_into().unwrap();
        let secret = x25519_dalek::StaticSecret::from(secret_bytes);
        let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(eph));
        if !shared.was_contributory() {
            return Err(CryptoError::IntegrityFailure);
        }
        let own_public = x25519_dalek::PublicKey::from(&secret);
        let sym = Self::derive(shared.as_bytes(), &eph, own_public.as_bytes());
        Aes256Gcm.decrypt(&sym, sealed)
    }
}

pub struct Sha256Hash;

impl HashFunction for Sha256Hash {
    fn name(&self) -> &'static str {
        "SHA256"
    }

    fn digest(&self, data: &[u8]) -> Vec<u8> {
        Sha256::digest(data).to_vec()
    }
}

/// Bundle of the primitives every protocol module draws from.
#[derive(Clone)]
pub struct CryptoSuite {
    pub signature: Arc<dyn SignatureScheme>,
    pub cipher: Arc<dyn SymmetricCipher>,
    pub public_key: Arc<dyn PublicKeyCipher>,
    pub hash: Arc<dyn HashFunction>,
}

impl Default for CryptoSuite {
    fn default() -> Self {
        CryptoSuite {
            signature: Arc::new(Ed25519),
            cipher: Arc::new(Aes256Gcm),
            public_key: Arc::new(X25519SealedBox),
            hash: Arc::new(Sha256Hash),
        }
    }
}

impl fmt::Debug for CryptoSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CryptoSuite")
            .field("signature", &self.signature.name())
            .field("cipher", &self.cipher.name())
            .field("public_key", &self.public_key.name())
            .field("hash", &self.hash.name())
            .finish()
    }
}

impl CryptoSuite {
    pub fn with_cipher(mut self, cipher: Arc<dyn SymmetricCipher>) -> Self {
        self.cipher = cipher;
        self
    }

    /// Password-to-key derivation: the digest of the password, truncated or
    /// extended by chained hashing to the cipher's key length.
    pub fn key_derive(&self, password: &str) -> Result<SymmetricKey, CryptoError> {
        if password.is_empty() {
            return Err(CryptoError::EmptyPassword);
        }
        let want = self.cipher.key_len();
        let mut out = self.hash.digest(password.as_bytes());
        let mut block = out.clone();
        while out.len() < want {
            block = self.hash.digest(&block);
            out.extend_from_slice(&block);
        }
        out.truncate(want);
        Ok(SymmetricKey(out))
    }

    pub fn random_key(&self, rng: &SeededRng) -> SymmetricKey {
        SymmetricKey(rng.bytes(self.cipher.key_len()))
    }

    pub fn encrypt(
        &self,
        key: &SymmetricKey,
        plaintext: &[u8],
        rng: &SeededRng,
    ) -> Result<Vec<u8>, CryptoError> {
        self.cipher.encrypt(key, plaintext, rng)
    }

    pub fn decrypt(&self, key: &SymmetricKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        self.cipher.decrypt(key, ciphertext)
    }
}

pub const SALT_LEN: usize = 16;
pub const DIGEST_LEN: usize = 32;

/// Salted SHA-256 password digest, stored with its salt.
#[derive(Clone, PartialEq, Eq)]
pub struct PasswordHash {
    salt: [u8; SALT_LEN],
    digest: [u8; DIGEST_LEN],
}

impl PasswordHash {
    pub fn new(password: &str, rng: &SeededRng) -> Result<Self, CryptoError> {
        if password.is_empty() {
            return Err(CryptoError::EmptyPassword);
        }
        Ok(Self::with_salt(password, rng.array()))
    }

    pub fn with_salt(password: &str, salt: [u8; SALT_LEN]) -> Self {
        let mut h = Sha256::new();
        h.update(salt);
        h.update(password.as_bytes());
        PasswordHash {
            salt,
            digest: h.finalize().into(),
        }
    }

    pub fn matches(&self, password: &str) -> bool {
        // timing is irrelevant inside the simulator; plain comparison is fine
        Self::with_salt(password, self.salt).digest == self.digest
    }

    pub fn salt(&self) -> &[u8; SALT_LEN] {
        &self.salt
    }

    pub fn digest(&self) -> &[u8; DIGEST_LEN] {
        &self.digest
    }

    /// `salt | digest`, the stored form.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.salt.to_vec();
        out.extend_from_slice(&self.digest);
        out
    }
}

impl fmt::Debug for PasswordHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PasswordHash({})", hex::encode(self.digest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn key_derive_fixture() {
        let suite = CryptoSuite::default();
        let key = suite.key_derive("s3cret").unwrap();
        assert_eq!(key.as_bytes().len(), 32);
        // SHA-256("s3cret"), computed independently with a reference digest tool
        assert_eq!(
            hex::encode(key.as_bytes()),
            "1ec1c26b50d5d3c58d9583181af8076655fe00756bf7285940ba3670f99fcba0"
        );
        assert_eq!(key, suite.key_derive("s3cret").unwrap());
        assert_ne!(key, suite.key_derive("s3cret2").unwrap());
        assert_eq!(suite.key_derive(""), Err(CryptoError::EmptyPassword));
    }

    #[test]
    fn key_derive_truncates_for_short_keys() {
        let suite = CryptoSuite::default().with_cipher(Arc::new(Aes128Gcm));
        let key = suite.key_derive("s3cret").unwrap();
        assert_eq!(hex::encode(key.as_bytes()), "1ec1c26b50d5d3c58d9583181af80766");
    }

    #[test]
    fn wrong_key_is_integrity_failure() {
        let rng = SeededRng::from_seed(1);
        let suite = CryptoSuite::default();
        let k1 = suite.random_key(&rng);
        let k2 = suite.random_key(&rng);
        let ct = suite.encrypt(&k1, b"payload", &rng).unwrap();
        assert_eq!(suite.decrypt(&k2, &ct), Err(CryptoError::IntegrityFailure));
        assert_eq!(
            suite.decrypt(&SymmetricKey::from_bytes(vec![0; 5]), &ct),
            Err(CryptoError::InvalidKey { expected: 32, actual: 5 })
        );
    }

    #[test]
    fn sealed_box_roundtrip_and_wrong_recipient() {
        let rng = SeededRng::from_seed(2);
        let pke = X25519SealedBox;
        let alice = pke.generate(&rng);
        let bob = pke.generate(&rng);
        let ct = pke.encrypt(&alice.public, b"session key", &rng).unwrap();
        assert_eq!(pke.decrypt(&alice, &ct).unwrap(), b"session key");
        assert_eq!(pke.decrypt(&bob, &ct), Err(CryptoError::IntegrityFailure));
    }

    #[test]
    fn password_hash_is_salted() {
        let rng = SeededRng::from_seed(3);
        let a = PasswordHash::new("pw", &rng).unwrap();
        let b = PasswordHash::new("pw", &rng).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert!(a.matches("pw") && b.matches("pw"));
        assert!(!a.matches("pw2"));
        assert_eq!(a.to_bytes().len(), SALT_LEN + DIGEST_LEN);
        assert!(!a.to_bytes().windows(2).any(|w| w == b"pw"));
    }

    #[test]
    fn seeded_rng_is_reproducible() {
        let a = SeededRng::from_seed(9);
        let b = SeededRng::from_seed(9);
        assert_eq!(a.bytes(16), b.bytes(16));
    }

    fn ciphers() -> Vec<Arc<dyn SymmetricCipher>> {
        vec![Arc::new(Aes256Gcm), Arc::new(Aes128Gcm), Arc::new(ChaCha20Poly1305Cipher)]
    }

    proptest! {
        #[test]
        fn symmetric_roundtrip_and_tamper(msg in proptest::collection::vec(any::<u8>(), 0..200), seed: u64, flip in any::<prop::sample::Index>()) {
            let rng = SeededRng::from_seed(seed);
            for cipher in ciphers() {
                let key = SymmetricKey::from_bytes(rng.bytes(cipher.key_len()));
                let mut ct = cipher.encrypt(&key, &msg, &rng).unwrap();
                prop_assert_eq!(cipher.decrypt(&key, &ct).unwrap(), msg.clone());
                let i = flip.index(ct.len());
                ct[i] ^= 0x01;
                prop_assert_eq!(cipher.decrypt(&key, &ct), Err(CryptoError::IntegrityFailure));
            }
        }

        #[test]
        fn signature_soundness(msg in proptest::collection::vec(any::<u8>(), 0..100), other in proptest::collection::vec(any::<u8>(), 0..100), seed: u64) {
            let rng = SeededRng::from_seed(seed);
            let scheme = Ed25519;
            let kp = scheme.generate(&rng);
            let foreign = scheme.generate(&rng);
            let sig = scheme.sign(&kp, &msg);
            prop_assert!(scheme.verify(&kp.public, &msg, &sig));
            prop_assert!(!scheme.verify(&foreign.public, &msg, &sig));
            if other != msg {
                prop_assert!(!scheme.verify(&kp.public, &other, &sig));
            }
        }
    }
}
