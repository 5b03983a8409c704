//! Key derivation, authenticated sealing and session-key generation.
//!
//! Every envelope in the protocol is a [`SealedBox`] produced by
//! XChaCha20-Poly1305 under a 32-byte [`SymmetricKey`]. Password keys come
//! from [`derive_key`], which is fixed bit-exactly so keytabs and traces are
//! portable between implementations.

pub mod keytab;

use std::fmt;

use chacha20poly1305::aead::{AeadInOut, KeyInit};
use chacha20poly1305::{Key, Tag, XChaCha20Poly1305, XNonce};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use keytab::{Keytab, KeytabEntry, KeytabError};

/// Length of every key in the system.
pub const KEY_LEN: usize = 32;
/// XChaCha20 nonce length.
pub const NONCE_LEN: usize = 24;
/// Poly1305 tag length.
pub const TAG_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("password must not be empty")]
    InvalidPassword,
    #[error("password index {0} out of range (expected 1..=3)")]
    InvalidIndex(u8),
    /// Wrong key or tampered box. The two cases are deliberately not told apart.
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("sealed box too short: {0} bytes")]
    MalformedBox(usize),
    #[error("key must be {KEY_LEN} bytes, got {0}")]
    BadKeyLength(usize),
}

/// Where a key came from. Informational only: equality compares bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyOrigin {
    PasswordDerived,
    Session,
    LongTerm,
}

#[derive(Clone)]
pub struct SymmetricKey {
    bytes: [u8; KEY_LEN],
    origin: KeyOrigin,
}

impl SymmetricKey {
    pub fn new(bytes: [u8; KEY_LEN], origin: KeyOrigin) -> Self {
        Self { bytes, origin }
    }

    pub fn from_slice(bytes: &[u8], origin: KeyOrigin) -> Result<Self, CryptoError> {
        let bytes: [u8; KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::BadKeyLength(bytes.len()))?;
        Ok(Self { bytes, origin })
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    pub fn origin(&self) -> KeyOrigin {
        self.origin
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.bytes)
    }

    /// Short fingerprint for logs; never the full key.
    pub fn fingerprint(&self) -> String {
        hex::encode(&Sha256::digest(self.bytes)[..4])
    }
}

impl PartialEq for SymmetricKey {
    fn eq(&self, other: &Self) -> bool {
        // constant-time over the key bytes
        self.bytes
            .iter()
            .zip(other.bytes.iter())
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            == 0
    }
}

impl Eq for SymmetricKey {}

impl PartialOrd for SymmetricKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SymmetricKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bytes.cmp(&other.bytes)
    }
}

impl std::hash::Hash for SymmetricKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bytes.hash(state);
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey({:?}, #{})", self.origin, self.fingerprint())
    }
}

/// Derives the key for one of a client's registered passwords.
///
/// `SHA-256(password ‖ 0x00 ‖ principal ‖ 0x00 ‖ index)`. Index 0 is reserved
/// for long-term service keys derived from a passphrase, see
/// [`derive_long_term_key`].
pub fn derive_key(password: &str, principal: &str, index: u8) -> Result<SymmetricKey, CryptoError> {
    if !(1..=3).contains(&index) {
        return Err(CryptoError::InvalidIndex(index));
    }
    derive_raw(password, principal, index, KeyOrigin::PasswordDerived)
}

/// Long-term service key (K_tgs, K_v) from a passphrase, same construction with index 0.
pub fn derive_long_term_key(passphrase: &str, principal: &str) -> Result<SymmetricKey, CryptoError> {
    derive_raw(passphrase, principal, 0, KeyOrigin::LongTerm)
}

fn derive_raw(password: &str, principal: &str, index: u8, origin: KeyOrigin) -> Result<SymmetricKey, CryptoError> {
    if password.is_empty() {
        return Err(CryptoError::InvalidPassword);
    }
    let mut h = Sha256::new();
    h.update(password.as_bytes());
    h.update([0u8]);
    h.update(principal.as_bytes());
    h.update([0u8]);
    h.update([index]);
    Ok(SymmetricKey::new(h.finalize().into(), origin))
}

/// Authenticated ciphertext: `nonce ‖ ciphertext ‖ tag` on the wire.
#[derive(Clone, PartialEq, Eq)]
pub struct SealedBox {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedBox {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return Err(CryptoError::MalformedBox(bytes.len()));
        }
        let (nonce, rest) = bytes.split_at(NONCE_LEN);
        let (ciphertext, tag) = rest.split_at(rest.len() - TAG_LEN);
        Ok(Self {
            nonce: nonce.try_into().expect("split length"),
            ciphertext: ciphertext.to_vec(),
            tag: tag.try_into().expect("split length"),
        })
    }

    pub fn encoded_len(&self) -> usize {
        NONCE_LEN + self.ciphertext.len() + TAG_LEN
    }
}

impl fmt::Debug for SealedBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SealedBox(nonce={}, {} bytes)",
            hex::encode(&self.nonce[..6]),
            self.ciphertext.len()
        )
    }
}

/// Supplies a fresh nonce for every seal.
pub trait NonceSource {
    fn next_nonce(&mut self) -> [u8; NONCE_LEN];
}

/// Counter-based nonces: a 16-byte prefix followed by a big-endian counter.
/// Reproducible, and unique as long as prefixes differ between sealers.
#[derive(Debug, Clone)]
pub struct CounterNonceSource {
    prefix: [u8; 16],
    counter: u64,
}

impl CounterNonceSource {
    pub fn new(prefix: [u8; 16]) -> Self {
        Self { prefix, counter: 0 }
    }

    /// Prefix taken from the hash of a label, so every principal gets its own stream.
    pub fn for_label(seed: u64, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"nonce");
        h.update(seed.to_be_bytes());
        h.update(label.as_bytes());
        let digest = h.finalize();
        Self::new(digest[..16].try_into().expect("16 bytes"))
    }
}

impl NonceSource for CounterNonceSource {
    fn next_nonce(&mut self) -> [u8; NONCE_LEN] {
        let mut n = [0u8; NONCE_LEN];
        n[..16].copy_from_slice(&self.prefix);
        n[16..].copy_from_slice(&self.counter.to_be_bytes());
        self.counter += 1;
        n
    }
}

/// Seeded ChaCha20 stream used for session keys and protocol nonces.
#[derive(Debug, Clone)]
pub struct DeterministicRandomSource(ChaCha20Rng);

impl DeterministicRandomSource {
    pub fn from_seed(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Independent stream for one labelled consumer under a run seed.
    pub fn for_label(seed: u64, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"rng");
        h.update(seed.to_be_bytes());
        h.update(label.as_bytes());
        Self(ChaCha20Rng::from_seed(h.finalize().into()))
    }

    pub fn from_os() -> Self {
        Self(ChaCha20Rng::from_os_rng())
    }
}

impl RngCore for DeterministicRandomSource {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

impl NonceSource for DeterministicRandomSource {
    fn next_nonce(&mut self) -> [u8; NONCE_LEN] {
        let mut n = [0u8; NONCE_LEN];
        self.0.fill_bytes(&mut n);
        n
    }
}

pub fn gen_session_key(rng: &mut impl RngCore) -> SymmetricKey {
    let mut bytes = [0u8; KEY_LEN];
    rng.fill_bytes(&mut bytes);
    SymmetricKey::new(bytes, KeyOrigin::Session)
}

pub fn seal(key: &SymmetricKey, plaintext: &[u8], nonces: &mut impl NonceSource) -> SealedBox {
    let nonce = nonces.next_nonce();
    let cipher = XChaCha20Poly1305::new(&Key::from(key.bytes));
    let mut buf = plaintext.to_vec();
    let tag = cipher
        .encrypt_inout_detached(&XNonce::from(nonce), &[], buf.as_mut_slice().into())
        .expect("plaintext length within XChaCha20 limits");
    SealedBox {
        nonce,
        ciphertext: buf,
        tag: tag.into(),
    }
}

pub fn open(key: &SymmetricKey, sealed: &SealedBox) -> Result<Vec<u8>, CryptoError> {
    let cipher = XChaCha20Poly1305::new(&Key::from(key.bytes));
    let mut buf = sealed.ciphertext.clone();
    cipher
        .decrypt_inout_detached(
            &XNonce::from(sealed.nonce),
            &[],
            buf.as_mut_slice().into(),
            &Tag::from(sealed.tag),
        )
        .map_err(|_| CryptoError::AuthenticationFailure)?;
    Ok(buf)
}

/// Per-principal randomness: session keys, protocol nonces and sealing nonces.
///
/// Simulated principals use [`Entropy::seeded`]; daemons use [`Entropy::system`].
#[derive(Debug, Clone)]
pub struct Entropy {
    rng: DeterministicRandomSource,
    nonces: Option<CounterNonceSource>,
}

impl Entropy {
    pub fn seeded(seed: u64, label: &str) -> Self {
        Self {
            rng: DeterministicRandomSource::for_label(seed, label),
            nonces: Some(CounterNonceSource::for_label(seed, label)),
        }
    }

    pub fn system() -> Self {
        Self {
            rng: DeterministicRandomSource::from_os(),
            nonces: None,
        }
    }

    pub fn session_key(&mut self) -> SymmetricKey {
        gen_session_key(&mut self.rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn seal(&mut self, key: &SymmetricKey, plaintext: &[u8]) -> SealedBox {
        seal(key, plaintext, self)
    }
}

impl NonceSource for Entropy {
    fn next_nonce(&mut self) -> [u8; NONCE_LEN] {
        match &mut self.nonces {
            Some(counter) => counter.next_nonce(),
            None => self.rng.next_nonce(),
        }
    }
}
