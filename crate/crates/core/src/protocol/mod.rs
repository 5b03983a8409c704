//! Message algebra for both protocol variants and its wire codec.
//!
//! The triple-password variant uses twelve messages (M1, M2_1, M2_2, M3,
//! M4_1, M4_2, M5..M10); the baseline uses six (B1..B6). Every sealed field
//! is a [`SealedBox`] whose plaintext is one of the bodies in [`body`].

pub mod body;
pub mod codec;
mod message;
mod ticket;

use std::fmt;

use thiserror::Error;

pub use body::{
    AuthenticatorBody, ChallengeBody, ChallengeResponse, MutualAuthBody, OpenError, PasswordBundle, Sealable,
    ServerPasswordPart, ServiceReplyPart, ServiceTicketBody, TgsTicketBody, TgtReplyPart,
};
pub use codec::{decode, encode, CodecError, FrameDecoder, HEADER_LEN, MAGIC, MAX_PAYLOAD};
pub use message::{
    AttackReport, Envelope, Incident, MessageKind, ProtocolMessage, ServiceRequest, ServiceTicketReply,
    ServiceTicketRequest, TgtReply, TicketRequest,
};
pub use ticket::{
    make_authenticator, make_ticket_tgs, make_ticket_v, open_authenticator, open_ticket_tgs, open_ticket_v,
    Authenticator, TicketTgs, TicketV,
};

pub use crate::crypto::SealedBox;

/// Largest name accepted for principals and addresses.
pub const MAX_NAME_LEN: usize = 255;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid principal id: {0}")]
    InvalidPrincipal(&'static str),
    #[error("invalid network address: {0}")]
    InvalidAddress(&'static str),
    #[error("lifetime expiry {expiry} precedes start {start}")]
    InvertedLifetime { start: i64, expiry: i64 },
}

fn check_name(s: &str) -> Result<(), &'static str> {
    if s.is_empty() {
        Err("empty")
    } else if s.len() > MAX_NAME_LEN {
        Err("longer than 255 bytes")
    } else if s.as_bytes().contains(&0) {
        Err("contains NUL")
    } else {
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrincipalId(String);

impl PrincipalId {
    pub fn new(name: impl Into<String>) -> Result<Self, ProtocolError> {
        let name = name.into();
        check_name(&name).map_err(ProtocolError::InvalidPrincipal)?;
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl std::str::FromStr for PrincipalId {
    type Err = ProtocolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// Client address as seen by the network: dotted quad or a simulator node label.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetworkAddress(String);

impl NetworkAddress {
    pub fn new(addr: impl Into<String>) -> Result<Self, ProtocolError> {
        let addr = addr.into();
        check_name(&addr).map_err(ProtocolError::InvalidAddress)?;
        Ok(Self(addr))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NetworkAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NetworkAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Nonce(pub u64);

/// Logical ticks in the simulator, seconds since the epoch on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn plus(self, secs: i64) -> Timestamp {
        Timestamp(self.0.saturating_add(secs))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lifetime {
    start: Timestamp,
    expiry: Timestamp,
}

impl Lifetime {
    pub fn new(start: Timestamp, expiry: Timestamp) -> Result<Self, ProtocolError> {
        if expiry < start {
            return Err(ProtocolError::InvertedLifetime {
                start: start.0,
                expiry: expiry.0,
            });
        }
        Ok(Self { start, expiry })
    }

    /// `[start, start + secs]`, with negative durations clamped to zero.
    pub fn starting_at(start: Timestamp, secs: i64) -> Self {
        Self {
            start,
            expiry: start.plus(secs.max(0)),
        }
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn expiry(&self) -> Timestamp {
        self.expiry
    }

    pub fn contains(&self, now: Timestamp) -> bool {
        self.start <= now && now <= self.expiry
    }
}

/// True iff `|now - ts| <= window`.
pub fn check_freshness(ts: Timestamp, now: Timestamp, window: u64) -> bool {
    ts.0.abs_diff(now.0) <= window
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn freshness_boundaries() {
        assert!(check_freshness(Timestamp(100), Timestamp(100), 120));
        assert!(check_freshness(Timestamp(100), Timestamp(220), 120));
        assert!(!check_freshness(Timestamp(100), Timestamp(221), 120));
        assert!(check_freshness(Timestamp(i64::MIN), Timestamp(i64::MIN), 1));
        assert!(!check_freshness(Timestamp(i64::MIN), Timestamp(i64::MAX), u64::MAX - 1));
    }

    proptest! {
        #[test]
        fn freshness_is_symmetric(ts in any::<i64>(), now in any::<i64>(), window in 1u64..1_000_000) {
            prop_assert_eq!(
                check_freshness(Timestamp(ts), Timestamp(now), window),
                check_freshness(Timestamp(now), Timestamp(ts), window)
            );
        }
    }

    #[test]
    fn principal_invariants() {
        assert!(PrincipalId::new("").is_err());
        assert!(PrincipalId::new("a\0b").is_err());
        assert!(PrincipalId::new("x".repeat(256)).is_err());
        assert_eq!(PrincipalId::new("alice").unwrap().as_str(), "alice");
        assert!(NetworkAddress::new("").is_err());
    }

    #[test]
    fn lifetime_ordering() {
        assert!(Lifetime::new(Timestamp(5), Timestamp(4)).is_err());
        let l = Lifetime::new(Timestamp(5), Timestamp(5)).unwrap();
        assert!(l.contains(Timestamp(5)));
        assert!(!l.contains(Timestamp(6)));
        assert_eq!(Lifetime::starting_at(Timestamp(10), -3).expiry(), Timestamp(10));
    }
}
