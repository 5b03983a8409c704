use std::fmt;
use std::fmt::Write as _;

use super::{DenyReason, Dest, Outbound, PrincipalEvent, Reaction, Timing, Variant};
use crate::crypto::{Entropy, SymmetricKey};
use crate::protocol::{
    make_authenticator, ChallengeBody, ChallengeResponse, Envelope, Lifetime, MessageKind, MutualAuthBody,
    NetworkAddress, Nonce, PrincipalId, ProtocolMessage, Sealable, ServiceReplyPart, ServiceRequest,
    ServiceTicketReply, ServiceTicketRequest, TgtReply, TgtReplyPart, TicketRequest, TicketTgs, TicketV, Timestamp,
};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub id: PrincipalId,
    pub addr: NetworkAddress,
    pub tgs: PrincipalId,
    pub server: PrincipalId,
    /// k1, k2, k3. The baseline flow only uses k1.
    pub keys: [SymmetricKey; 3],
    pub variant: Variant,
    pub timing: Timing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientPhase {
    Idle,
    AwaitTgt { n1: Nonce },
    AwaitServiceTicket { n2: Nonce },
    AwaitChallenge,
    AwaitMutualAuth { t5: Timestamp },
    Done,
}

impl fmt::Display for ClientPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClientPhase::Idle => "idle",
            ClientPhase::AwaitTgt { .. } => "await_tgt",
            ClientPhase::AwaitServiceTicket { .. } => "await_service_ticket",
            ClientPhase::AwaitChallenge => "await_challenge",
            ClientPhase::AwaitMutualAuth { .. } => "await_mutual_auth",
            ClientPhase::Done => "done",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientFailure {
    OpenFailure(MessageKind),
    NonceMismatch(MessageKind),
    BadMutualAuth,
    WrongClient,
}

impl fmt::Display for ClientFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientFailure::OpenFailure(k) => write!(f, "{k} does not open"),
            ClientFailure::NonceMismatch(k) => write!(f, "{k} nonce mismatch"),
            ClientFailure::BadMutualAuth => f.write_str("mutual authentication check failed"),
            ClientFailure::WrongClient => f.write_str("challenge names another client"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOutcome {
    Authenticated { server: PrincipalId },
    Failed(ClientFailure),
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub config: ClientConfig,
    pub phase: ClientPhase,
    pub tgt: Option<(TicketTgs, SymmetricKey)>,
    pub service_ticket: Option<(TicketV, SymmetricKey)>,
    pub outcome: Option<ClientOutcome>,
    entropy: Entropy,
}

impl ClientState {
    pub fn new(config: ClientConfig, entropy: Entropy) -> Self {
        Self {
            config,
            phase: ClientPhase::Idle,
            tgt: None,
            service_ticket: None,
            outcome: None,
            entropy,
        }
    }

    pub fn tgs_session_key(&self) -> Option<&SymmetricKey> {
        self.tgt.as_ref().map(|(_, k)| k)
    }

    pub fn service_session_key(&self) -> Option<&SymmetricKey> {
        self.service_ticket.as_ref().map(|(_, k)| k)
    }

    fn triple(&self) -> bool {
        self.config.variant == Variant::Triple
    }

    /// Emits M1 (or B1) to the AS.
    pub fn start(&mut self, now: Timestamp) -> Reaction {
        let n1 = Nonce(self.entropy.next_u64());
        let req = TicketRequest {
            client: self.config.id.clone(),
            target_tgs: self.config.tgs.clone(),
            n1,
            requested_lifetime: Lifetime::starting_at(now, self.config.timing.tgt_lifetime),
        };
        self.phase = ClientPhase::AwaitTgt { n1 };
        let msg = if self.triple() {
            ProtocolMessage::M1(req)
        } else {
            ProtocolMessage::B1(req)
        };
        Reaction::default().send(Outbound::to(Dest::As, msg))
    }

    pub fn handle(&mut self, msg: &ProtocolMessage, now: Timestamp) -> Result<Reaction, DenyReason> {
        let kind = msg.kind();
        super::expect_variant(kind, self.config.variant)?;
        let step = match (self.phase, msg) {
            (ClientPhase::AwaitTgt { n1 }, ProtocolMessage::M2_1(r) | ProtocolMessage::B2(r)) => {
                self.on_tgt_reply(kind, r, n1, now)
            }
            (ClientPhase::AwaitServiceTicket { n2 }, ProtocolMessage::M4_1(r) | ProtocolMessage::B4(r)) => {
                self.on_service_reply(kind, r, n2, now)
            }
            (ClientPhase::AwaitChallenge, ProtocolMessage::M6(env)) => self.on_challenge(env, now),
            (ClientPhase::AwaitMutualAuth { t5 }, ProtocolMessage::M8(env) | ProtocolMessage::B6(env)) => {
                self.on_mutual_auth(kind, env, t5)
            }
            _ => return Err(DenyReason::Unexpected(kind)),
        };
        Ok(step.unwrap_or_else(|failure| self.finish(ClientOutcome::Failed(failure))))
    }

    fn on_tgt_reply(
        &mut self,
        kind: MessageKind,
        reply: &TgtReply,
        n1: Nonce,
        now: Timestamp,
    ) -> Result<Reaction, ClientFailure> {
        let part =
            TgtReplyPart::open(&self.config.keys[0], &reply.enc).map_err(|_| ClientFailure::OpenFailure(kind))?;
        if part.n1 != n1 {
            return Err(ClientFailure::NonceMismatch(kind));
        }
        let n2 = Nonce(self.entropy.next_u64());
        let authenticator = make_authenticator(
            &part.session_key,
            &self.config.id,
            &self.config.addr,
            now,
            &mut self.entropy,
        );
        let req = ServiceTicketRequest {
            ticket: reply.ticket.clone(),
            target_v: self.config.server.clone(),
            n2,
            authenticator,
        };
        self.tgt = Some((reply.ticket.clone(), part.session_key));
        self.phase = ClientPhase::AwaitServiceTicket { n2 };
        let msg = if self.triple() {
            ProtocolMessage::M3(req)
        } else {
            ProtocolMessage::B3(req)
        };
        Ok(Reaction::default().send(Outbound::to(Dest::Tgs(self.config.tgs.clone()), msg)))
    }

    fn on_service_reply(
        &mut self,
        kind: MessageKind,
        reply: &ServiceTicketReply,
        n2: Nonce,
        now: Timestamp,
    ) -> Result<Reaction, ClientFailure> {
        let key = if self.triple() {
            self.config.keys[1].clone()
        } else {
            self.tgs_session_key().expect("tgt stored before service reply").clone()
        };
        let part = ServiceReplyPart::open(&key, &reply.enc).map_err(|_| ClientFailure::OpenFailure(kind))?;
        if part.n2 != n2 {
            return Err(ClientFailure::NonceMismatch(kind));
        }
        let authenticator = make_authenticator(
            &part.session_key,
            &self.config.id,
            &self.config.addr,
            now,
            &mut self.entropy,
        );
        let req = ServiceRequest {
            ticket: reply.ticket.clone(),
            authenticator,
        };
        self.service_ticket = Some((reply.ticket.clone(), part.session_key));
        let msg = if self.triple() {
            self.phase = ClientPhase::AwaitChallenge;
            ProtocolMessage::M5(req)
        } else {
            // B6 echoes the authenticator time + 1
            self.phase = ClientPhase::AwaitMutualAuth { t5: now };
            ProtocolMessage::B5(req)
        };
        Ok(Reaction::default().send(Outbound::to(Dest::Server(self.config.server.clone()), msg)))
    }

    fn on_challenge(&mut self, env: &Envelope, now: Timestamp) -> Result<Reaction, ClientFailure> {
        let key = self.service_session_key().expect("service ticket stored").clone();
        let challenge = ChallengeBody::open(&key, &env.enc).map_err(|_| ClientFailure::OpenFailure(MessageKind::M6))?;
        if challenge.client != self.config.id {
            return Err(ClientFailure::WrongClient);
        }
        let response = ChallengeResponse {
            k3: self.config.keys[2].clone(),
            t5: now,
        }
        .seal(&key, &mut self.entropy);
        self.phase = ClientPhase::AwaitMutualAuth { t5: now };
        Ok(Reaction::default().send(Outbound::to(
            Dest::Server(self.config.server.clone()),
            ProtocolMessage::M7(Envelope { enc: response }),
        )))
    }

    fn on_mutual_auth(&mut self, kind: MessageKind, env: &Envelope, t5: Timestamp) -> Result<Reaction, ClientFailure> {
        let key = self.service_session_key().expect("service ticket stored");
        let body = MutualAuthBody::open(key, &env.enc).map_err(|_| ClientFailure::OpenFailure(kind))?;
        if body.t5_plus_1 != t5.plus(1) {
            return Err(ClientFailure::BadMutualAuth);
        }
        Ok(self.finish(ClientOutcome::Authenticated {
            server: self.config.server.clone(),
        }))
    }

    fn finish(&mut self, outcome: ClientOutcome) -> Reaction {
        self.phase = ClientPhase::Done;
        self.outcome = Some(outcome.clone());
        Reaction::default().event(PrincipalEvent::ClientDone(outcome))
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "role=client");
        let _ = writeln!(out, "id={}", self.config.id);
        let _ = writeln!(out, "variant={}", self.config.variant);
        let _ = writeln!(out, "phase={}", self.phase);
        if let Some(k) = self.tgs_session_key() {
            let _ = writeln!(out, "session_c_tgs={}", k.fingerprint());
        }
        if let Some(k) = self.service_session_key() {
            let _ = writeln!(out, "session_c_v={}", k.fingerprint());
        }
        match &self.outcome {
            Some(ClientOutcome::Authenticated { server }) => {
                let _ = writeln!(out, "outcome=authenticated:{server}");
            }
            Some(ClientOutcome::Failed(f)) => {
                let _ = writeln!(out, "outcome=failed:{f}");
            }
            None => {}
        }
        out
    }
}
