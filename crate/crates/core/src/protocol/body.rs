//! Plaintexts carried inside sealed fields.
//!
//! Each body starts with a one-byte content label so a box sealed for one
//! purpose never parses as another, even under a shared key (K_c,v seals the
//! authenticator, the challenge, the response and the mutual-auth reply).

use thiserror::Error;

use super::codec::{CodecError, Reader, Writer};
use super::{Lifetime, NetworkAddress, Nonce, PrincipalId, SealedBox, Timestamp};
use crate::crypto::{self, CryptoError, KeyOrigin, NonceSource, SymmetricKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OpenError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("sealed body malformed: {0}")]
    Malformed(#[from] CodecError),
}

pub trait Sealable: Sized {
    const LABEL: u8;

    fn write_body(&self, w: &mut Writer);
    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    fn to_plaintext(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u8(Self::LABEL);
        self.write_body(&mut w);
        w.into_inner()
    }

    fn from_plaintext(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        if r.u8()? != Self::LABEL {
            return Err(CodecError::InvalidField("content label"));
        }
        let body = Self::read_body(&mut r)?;
        r.finish()?;
        Ok(body)
    }

    fn seal(&self, key: &SymmetricKey, nonces: &mut impl NonceSource) -> SealedBox {
        crypto::seal(key, &self.to_plaintext(), nonces)
    }

    fn open(key: &SymmetricKey, sealed: &SealedBox) -> Result<Self, OpenError> {
        let plain = crypto::open(key, sealed)?;
        Ok(Self::from_plaintext(&plain)?)
    }
}

/// Inside the ticket-granting ticket, under K_tgs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TgsTicketBody {
    pub client: PrincipalId,
    pub client_addr: NetworkAddress,
    pub validity: Lifetime,
    pub session_key: SymmetricKey,
}

/// Inside the service ticket, under K_v.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceTicketBody {
    pub session_key: SymmetricKey,
    pub client: PrincipalId,
    pub client_addr: NetworkAddress,
    pub validity: Lifetime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthenticatorBody {
    pub client: PrincipalId,
    pub client_addr: NetworkAddress,
    pub created_at: Timestamp,
}

/// Client part of M2_1 / B2, under the client's first password key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TgtReplyPart {
    pub session_key: SymmetricKey,
    pub target_tgs: PrincipalId,
    pub n1: Nonce,
    pub validity: Lifetime,
}

/// M2_2 body, under K_tgs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasswordBundle {
    pub client: PrincipalId,
    pub k2: SymmetricKey,
    pub k3: SymmetricKey,
}

/// Client part of M4_1 (under k2) or B4 (under K_c,tgs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceReplyPart {
    pub n2: Nonce,
    pub target_v: PrincipalId,
    pub session_key: SymmetricKey,
    pub validity: Lifetime,
}

/// M4_2 body, under K_v.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerPasswordPart {
    pub client: PrincipalId,
    pub k3: SymmetricKey,
}

/// M6 body, under K_c,v.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeBody {
    pub client: PrincipalId,
    pub n3: Nonce,
}

/// M7 body, under K_c,v.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeResponse {
    pub k3: SymmetricKey,
    pub t5: Timestamp,
}

/// M8 / B6 body, under K_c,v.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutualAuthBody {
    pub t5_plus_1: Timestamp,
}

impl Sealable for TgsTicketBody {
    const LABEL: u8 = 0x21;

    fn write_body(&self, w: &mut Writer) {
        w.principal(&self.client);
        w.addr(&self.client_addr);
        w.lifetime(&self.validity);
        w.key(&self.session_key);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            client: r.principal()?,
            client_addr: r.addr()?,
            validity: r.lifetime()?,
            session_key: r.key(KeyOrigin::Session)?,
        })
    }
}

impl Sealable for ServiceTicketBody {
    const LABEL: u8 = 0x22;

    fn write_body(&self, w: &mut Writer) {
        w.key(&self.session_key);
        w.principal(&self.client);
        w.addr(&self.client_addr);
        w.lifetime(&self.validity);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            session_key: r.key(KeyOrigin::Session)?,
            client: r.principal()?,
            client_addr: r.addr()?,
            validity: r.lifetime()?,
        })
    }
}

impl Sealable for AuthenticatorBody {
    const LABEL: u8 = 0x23;

    fn write_body(&self, w: &mut Writer) {
        w.principal(&self.client);
        w.addr(&self.client_addr);
        w.timestamp(self.created_at);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            client: r.principal()?,
            client_addr: r.addr()?,
            created_at: r.timestamp()?,
        })
    }
}

impl Sealable for TgtReplyPart {
    const LABEL: u8 = 0x24;

    fn write_body(&self, w: &mut Writer) {
        w.key(&self.session_key);
        w.principal(&self.target_tgs);
        w.nonce(self.n1);
        w.lifetime(&self.validity);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            session_key: r.key(KeyOrigin::Session)?,
            target_tgs: r.principal()?,
            n1: r.nonce()?,
            validity: r.lifetime()?,
        })
    }
}

impl Sealable for PasswordBundle {
    const LABEL: u8 = 0x25;

    fn write_body(&self, w: &mut Writer) {
        w.principal(&self.client);
        w.key(&self.k2);
        w.key(&self.k3);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            client: r.principal()?,
            k2: r.key(KeyOrigin::PasswordDerived)?,
            k3: r.key(KeyOrigin::PasswordDerived)?,
        })
    }
}

impl Sealable for ServiceReplyPart {
    const LABEL: u8 = 0x26;

    fn write_body(&self, w: &mut Writer) {
        w.nonce(self.n2);
        w.principal(&self.target_v);
        w.key(&self.session_key);
        w.lifetime(&self.validity);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            n2: r.nonce()?,
            target_v: r.principal()?,
            session_key: r.key(KeyOrigin::Session)?,
            validity: r.lifetime()?,
        })
    }
}

impl Sealable for ServerPasswordPart {
    const LABEL: u8 = 0x27;

    fn write_body(&self, w: &mut Writer) {
        w.principal(&self.client);
        w.key(&self.k3);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            client: r.principal()?,
            k3: r.key(KeyOrigin::PasswordDerived)?,
        })
    }
}

impl Sealable for ChallengeBody {
    const LABEL: u8 = 0x28;

    fn write_body(&self, w: &mut Writer) {
        w.principal(&self.client);
        w.nonce(self.n3);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            client: r.principal()?,
            n3: r.nonce()?,
        })
    }
}

impl Sealable for ChallengeResponse {
    const LABEL: u8 = 0x29;

    fn write_body(&self, w: &mut Writer) {
        w.key(&self.k3);
        w.timestamp(self.t5);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            k3: r.key(KeyOrigin::PasswordDerived)?,
            t5: r.timestamp()?,
        })
    }
}

impl Sealable for MutualAuthBody {
    const LABEL: u8 = 0x2A;

    fn write_body(&self, w: &mut Writer) {
        w.timestamp(self.t5_plus_1);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            t5_plus_1: r.timestamp()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::CounterNonceSource;

    fn key(b: u8) -> SymmetricKey {
        SymmetricKey::new([b; 32], KeyOrigin::Session)
    }

    #[test]
    fn bodies_roundtrip_through_seal() {
        let mut n = CounterNonceSource::new([4; 16]);
        let body = ChallengeResponse {
            k3: key(3),
            t5: Timestamp(500),
        };
        let sealed = body.seal(&key(9), &mut n);
        assert_eq!(ChallengeResponse::open(&key(9), &sealed).unwrap(), body);
    }

    #[test]
    fn label_separates_bodies_under_one_key() {
        let mut n = CounterNonceSource::new([5; 16]);
        let m8 = MutualAuthBody {
            t5_plus_1: Timestamp(1),
        }
        .seal(&key(1), &mut n);
        assert!(matches!(
            ChallengeBody::open(&key(1), &m8),
            Err(OpenError::Malformed(CodecError::InvalidField("content label")))
        ));
    }

    #[test]
    fn wrong_key_is_a_crypto_error() {
        let mut n = CounterNonceSource::new([6; 16]);
        let sealed = ChallengeBody {
            client: PrincipalId::new("alice").unwrap(),
            n3: Nonce(3),
        }
        .seal(&key(1), &mut n);
        assert_eq!(
            ChallengeBody::open(&key(2), &sealed),
            Err(OpenError::Crypto(CryptoError::AuthenticationFailure))
        );
    }
}
