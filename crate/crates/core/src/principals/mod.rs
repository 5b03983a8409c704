//! Client, AS, TGS and service (V) state machines for both variants.
//!
//! Every handler maps `(state, message, source address, now)` to a new state
//! plus a [`Reaction`]: messages to send and events worth recording. The
//! simulator and the TCP daemons drive exactly these handlers.

mod client;
mod kdc;
mod server;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::SymmetricKey;
use crate::protocol::{
    check_freshness, open_authenticator, AttackReport, Authenticator, AuthenticatorBody, Incident, Lifetime,
    MessageKind, NetworkAddress, OpenError, PrincipalId, ProtocolMessage, ServiceTicketBody, TgsTicketBody, Timestamp,
};

pub use client::{ClientConfig, ClientFailure, ClientOutcome, ClientPhase, ClientState};
pub use kdc::{AsState, CredentialRecord, ForwardedPasswords, RegistrationError, TgsState};
pub use server::{Grant, PendingChallenge, ServerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Triple,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::Triple => "triple",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "triple" => Ok(Variant::Triple),
            other => Err(format!("unknown variant {other:?} (expected baseline or triple)")),
        }
    }
}

/// Time knobs shared by all principals. Units are ticks in the simulator and
/// seconds on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub freshness_window: u64,
    pub tgt_lifetime: i64,
    pub service_lifetime: i64,
    pub timer_duration: i64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            freshness_window: 120,
            tgt_lifetime: 36_000,
            service_lifetime: 3_600,
            timer_duration: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Client,
    As,
    Tgs,
    Server,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Client => "client",
            Role::As => "as",
            Role::Tgs => "tgs",
            Role::Server => "v",
        })
    }
}

/// Where an outgoing message goes. `Reply` returns it to whoever sent the
/// message being handled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dest {
    Reply,
    As,
    Tgs(PrincipalId),
    Server(PrincipalId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub dest: Dest,
    pub msg: ProtocolMessage,
}

impl Outbound {
    pub fn reply(msg: ProtocolMessage) -> Self {
        Self { dest: Dest::Reply, msg }
    }

    pub fn to(dest: Dest, msg: ProtocolMessage) -> Self {
        Self { dest, msg }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuspectedCompromise {
    /// Wrong K_c3 in M7: someone holds the session but not the password.
    Password,
    /// No answer before the deadline: ticket or session replay.
    TicketReplay,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompromiseNotice {
    pub client: PrincipalId,
    pub reporter: PrincipalId,
    pub suspect_addr: NetworkAddress,
    pub incident: Incident,
    pub suspected: SuspectedCompromise,
    pub unknown_client: bool,
    pub at: Timestamp,
}

impl fmt::Display for CompromiseNotice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "client={} incident={} suspect_addr={} reporter={} suspected={}{}",
            self.client,
            self.incident,
            self.suspect_addr,
            self.reporter,
            match self.suspected {
                SuspectedCompromise::Password => "password",
                SuspectedCompromise::TicketReplay => "ticket_replay",
            },
            if self.unknown_client { " unknown_client" } else { "" }
        )
    }
}

/// Things a handler wants the world to know about besides its messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrincipalEvent {
    ChallengeIssued {
        client: PrincipalId,
        deadline: Timestamp,
    },
    Granted {
        client: PrincipalId,
        server: PrincipalId,
    },
    /// V raised an M9.
    Alert(AttackReport),
    /// The deadline sweep expired a challenge.
    TimerFired {
        client: PrincipalId,
        deadline: Timestamp,
    },
    Notice(CompromiseNotice),
    ClientDone(ClientOutcome),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reaction {
    pub outbound: Vec<Outbound>,
    pub events: Vec<PrincipalEvent>,
}

impl Reaction {
    pub fn send(mut self, out: Outbound) -> Self {
        self.outbound.push(out);
        self
    }

    pub fn event(mut self, ev: PrincipalEvent) -> Self {
        self.events.push(ev);
        self
    }

    pub fn merge(&mut self, other: Reaction) {
        self.outbound.extend(other.outbound);
        self.events.extend(other.events);
    }
}

/// Why a handler refused a message. The message is dropped and nothing is sent.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DenyReason {
    #[error("unknown client {0}")]
    UnknownClient(PrincipalId),
    #[error("unknown tgs {0}")]
    UnknownTgs(PrincipalId),
    #[error("unknown server {0}")]
    UnknownServer(PrincipalId),
    #[error("ticket does not open under own key")]
    TicketAuthFailure,
    #[error("authenticator does not open under ticket session key")]
    AuthenticatorAuthFailure,
    #[error("authenticator client does not match ticket")]
    AuthenticatorMismatch,
    #[error("source address {source_addr} does not match ticket address {ticket}")]
    AddressMismatch {
        ticket: NetworkAddress,
        source_addr: NetworkAddress,
    },
    #[error("stale authenticator")]
    StaleAuthenticator,
    #[error("ticket outside its validity window")]
    ExpiredTicket,
    #[error("no forwarded password for {0}")]
    NoForwardedPassword(PrincipalId),
    #[error("{0} envelope does not open")]
    EnvelopeAuthFailure(MessageKind),
    #[error("{0} sealed body malformed")]
    Malformed(MessageKind),
    #[error("no pending challenge")]
    NoPendingChallenge,
    #[error("challenge already pending for {0}")]
    ChallengeAlreadyPending(PrincipalId),
    #[error("{0} does not belong to this principal's protocol variant")]
    WrongVariant(MessageKind),
    #[error("unexpected {0}")]
    Unexpected(MessageKind),
}

impl DenyReason {
    pub(crate) fn envelope(kind: MessageKind, err: OpenError) -> Self {
        match err {
            OpenError::Crypto(_) => DenyReason::EnvelopeAuthFailure(kind),
            OpenError::Malformed(_) => DenyReason::Malformed(kind),
        }
    }
}

/// The parts of a ticket that presentation checks need; identical for the
/// TGT and the service ticket.
#[derive(Debug, Clone)]
pub(crate) struct TicketClaims {
    pub client: PrincipalId,
    pub client_addr: NetworkAddress,
    pub validity: Lifetime,
    pub session_key: SymmetricKey,
}

impl From<TgsTicketBody> for TicketClaims {
    fn from(t: TgsTicketBody) -> Self {
        Self {
            client: t.client,
            client_addr: t.client_addr,
            validity: t.validity,
            session_key: t.session_key,
        }
    }
}

impl From<ServiceTicketBody> for TicketClaims {
    fn from(t: ServiceTicketBody) -> Self {
        Self {
            client: t.client,
            client_addr: t.client_addr,
            validity: t.validity,
            session_key: t.session_key,
        }
    }
}

/// Ticket + authenticator checks shared by the TGS (M3/B3) and V (M5/B5).
pub(crate) fn verify_presentation(
    ticket: &TicketClaims,
    authenticator: &Authenticator,
    src_addr: &NetworkAddress,
    now: Timestamp,
    window: u64,
) -> Result<AuthenticatorBody, DenyReason> {
    let auth =
        open_authenticator(&ticket.session_key, authenticator).map_err(|_| DenyReason::AuthenticatorAuthFailure)?;
    if auth.client != ticket.client || auth.client_addr != ticket.client_addr {
        return Err(DenyReason::AuthenticatorMismatch);
    }
    if &ticket.client_addr != src_addr {
        return Err(DenyReason::AddressMismatch {
            ticket: ticket.client_addr.clone(),
            source_addr: src_addr.clone(),
        });
    }
    if !check_freshness(auth.created_at, now, window) {
        return Err(DenyReason::StaleAuthenticator);
    }
    if !ticket.validity.contains(now) {
        return Err(DenyReason::ExpiredTicket);
    }
    Ok(auth)
}

/// One of the four principals, dispatched by message kind.
// one per node, so the variant size spread costs nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Principal {
    Client(ClientState),
    As(AsState),
    Tgs(TgsState),
    Server(ServerState),
}

impl Principal {
    pub fn role(&self) -> Role {
        match self {
            Principal::Client(_) => Role::Client,
            Principal::As(_) => Role::As,
            Principal::Tgs(_) => Role::Tgs,
            Principal::Server(_) => Role::Server,
        }
    }

    pub fn handle(
        &mut self,
        msg: &ProtocolMessage,
        src_addr: &NetworkAddress,
        now: Timestamp,
    ) -> Result<Reaction, DenyReason> {
        match self {
            Principal::Client(c) => c.handle(msg, now),
            Principal::As(a) => a.handle(msg, src_addr, now),
            Principal::Tgs(t) => t.handle(msg, src_addr, now),
            Principal::Server(v) => v.handle(msg, src_addr, now),
        }
    }

    /// Deadline sweep; only the service principal has timers.
    pub fn tick(&mut self, now: Timestamp) -> Reaction {
        match self {
            Principal::Server(v) => v.tick(now),
            _ => Reaction::default(),
        }
    }

    pub fn next_deadline(&self) -> Option<Timestamp> {
        match self {
            Principal::Server(v) => v.next_deadline(),
            _ => None,
        }
    }

    /// `key=value` lines describing the state, for assertions and debugging.
    /// Key material appears only as fingerprints.
    pub fn snapshot(&self) -> String {
        match self {
            Principal::Client(c) => c.snapshot(),
            Principal::As(a) => a.snapshot(),
            Principal::Tgs(t) => t.snapshot(),
            Principal::Server(v) => v.snapshot(),
        }
    }

    pub fn as_client(&self) -> Option<&ClientState> {
        match self {
            Principal::Client(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_kdc(&self) -> Option<&AsState> {
        match self {
            Principal::As(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_tgs(&self) -> Option<&TgsState> {
        match self {
            Principal::Tgs(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_server(&self) -> Option<&ServerState> {
        match self {
            Principal::Server(v) => Some(v),
            _ => None,
        }
    }
}

pub(crate) fn expect_variant(kind: MessageKind, variant: Variant) -> Result<(), DenyReason> {
    let ok = match variant {
        Variant::Baseline => kind.is_baseline(),
        Variant::Triple => !kind.is_baseline(),
    };
    if ok {
        Ok(())
    } else {
        Err(DenyReason::WrongVariant(kind))
    }
}
