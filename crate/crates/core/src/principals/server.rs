use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{
    expect_variant, verify_presentation, DenyReason, Dest, Outbound, PrincipalEvent, Reaction, Timing, Variant,
};
use crate::crypto::{Entropy, SymmetricKey};
use crate::protocol::{
    open_ticket_v, AttackReport, ChallengeBody, ChallengeResponse, Envelope, Incident, MessageKind, MutualAuthBody,
    NetworkAddress, Nonce, OpenError, PrincipalId, ProtocolMessage, Sealable, ServerPasswordPart, ServiceRequest,
    Timestamp,
};

/// A challenge V has sent (M6) and is waiting on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingChallenge {
    pub client: PrincipalId,
    pub session_key: SymmetricKey,
    pub n3: Nonce,
    pub issued_at: Timestamp,
    pub deadline: Timestamp,
    /// Source address of the M5 that opened the challenge.
    pub requester_addr: NetworkAddress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub client: PrincipalId,
    pub server: PrincipalId,
    pub addr: NetworkAddress,
    pub at: Timestamp,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub id: PrincipalId,
    pub own_key: SymmetricKey,
    /// Where M9 goes.
    pub tgs: PrincipalId,
    pub forwarded_k3: BTreeMap<PrincipalId, SymmetricKey>,
    pub pending: BTreeMap<PrincipalId, PendingChallenge>,
    pub grants: Vec<Grant>,
    pub alerts_sent: Vec<AttackReport>,
    pub variant: Variant,
    timing: Timing,
    entropy: Entropy,
}

impl ServerState {
    pub fn new(
        id: PrincipalId,
        own_key: SymmetricKey,
        tgs: PrincipalId,
        variant: Variant,
        timing: Timing,
        entropy: Entropy,
    ) -> Self {
        Self {
            id,
            own_key,
            tgs,
            forwarded_k3: BTreeMap::new(),
            pending: BTreeMap::new(),
            grants: Vec::new(),
            alerts_sent: Vec::new(),
            variant,
            timing,
            entropy,
        }
    }

    pub fn handle(
        &mut self,
        msg: &ProtocolMessage,
        src_addr: &NetworkAddress,
        now: Timestamp,
    ) -> Result<Reaction, DenyReason> {
        expect_variant(msg.kind(), self.variant)?;
        match msg {
            ProtocolMessage::M4_2(env) => self.handle_m4_2(env).map(|_| Reaction::default()),
            ProtocolMessage::M5(req) | ProtocolMessage::B5(req) => self.handle_service_request(req, src_addr, now),
            ProtocolMessage::M7(env) => self.handle_m7(env, src_addr, now),
            other => Err(DenyReason::Unexpected(other.kind())),
        }
    }

    pub fn handle_m4_2(&mut self, env: &Envelope) -> Result<(), DenyReason> {
        let part = ServerPasswordPart::open(&self.own_key, &env.enc)
            .map_err(|e| DenyReason::envelope(MessageKind::M4_2, e))?;
        self.forwarded_k3.insert(part.client, part.k3);
        Ok(())
    }

    /// B5 → B6 and a grant; M5 → M6 and a pending challenge.
    pub fn handle_service_request(
        &mut self,
        req: &ServiceRequest,
        src_addr: &NetworkAddress,
        now: Timestamp,
    ) -> Result<Reaction, DenyReason> {
        let claims = open_ticket_v(&self.own_key, &req.ticket)
            .map_err(|_| DenyReason::TicketAuthFailure)?
            .into();
        let auth = verify_presentation(&claims, &req.authenticator, src_addr, now, self.timing.freshness_window)?;
        let client = claims.client;

        match self.variant {
            Variant::Baseline => {
                let reply = MutualAuthBody {
                    t5_plus_1: auth.created_at.plus(1),
                }
                .seal(&claims.session_key, &mut self.entropy);
                Ok(self
                    .grant(client, src_addr, now)
                    .send(Outbound::reply(ProtocolMessage::B6(Envelope { enc: reply }))))
            }
            Variant::Triple => {
                if self.pending.contains_key(&client) {
                    return Err(DenyReason::ChallengeAlreadyPending(client));
                }
                let n3 = Nonce(self.entropy.next_u64());
                let deadline = now.plus(self.timing.timer_duration);
                let challenge = ChallengeBody {
                    client: client.clone(),
                    n3,
                }
                .seal(&claims.session_key, &mut self.entropy);
                self.pending.insert(
                    client.clone(),
                    PendingChallenge {
                        client: client.clone(),
                        session_key: claims.session_key,
                        n3,
                        issued_at: now,
                        deadline,
                        requester_addr: src_addr.clone(),
                    },
                );
                Ok(Reaction::default()
                    .send(Outbound::reply(ProtocolMessage::M6(Envelope { enc: challenge })))
                    .event(PrincipalEvent::ChallengeIssued { client, deadline }))
            }
        }
    }

    /// M7 carries no cleartext client id, so each pending challenge's session
    /// key is tried in turn.
    pub fn handle_m7(
        &mut self,
        env: &Envelope,
        src_addr: &NetworkAddress,
        now: Timestamp,
    ) -> Result<Reaction, DenyReason> {
        if self.pending.is_empty() {
            return Err(DenyReason::NoPendingChallenge);
        }
        let mut malformed = false;
        let mut matched = None;
        for (client, pending) in &self.pending {
            match ChallengeResponse::open(&pending.session_key, &env.enc) {
                Ok(resp) => {
                    matched = Some((client.clone(), resp));
                    break;
                }
                Err(OpenError::Malformed(_)) => malformed = true,
                Err(OpenError::Crypto(_)) => {}
            }
        }
        let Some((client, resp)) = matched else {
            return Err(if malformed {
                DenyReason::Malformed(MessageKind::M7)
            } else {
                DenyReason::EnvelopeAuthFailure(MessageKind::M7)
            });
        };

        let pending = self.pending.remove(&client).expect("matched a pending entry");
        if now > pending.deadline {
            return Ok(self.expire(pending));
        }
        match self.forwarded_k3.get(&client) {
            Some(k3) if *k3 == resp.k3 => {
                let reply = MutualAuthBody {
                    t5_plus_1: resp.t5.plus(1),
                }
                .seal(&pending.session_key, &mut self.entropy);
                Ok(self
                    .grant(client, src_addr, now)
                    .send(Outbound::reply(ProtocolMessage::M8(Envelope { enc: reply }))))
            }
            // a missing k3 is treated like a wrong one
            _ => Ok(self.alert(client, src_addr.clone(), Incident::BadPassword)),
        }
    }

    /// Expires every challenge whose deadline is strictly before `now`.
    pub fn tick(&mut self, now: Timestamp) -> Reaction {
        let expired: Vec<PrincipalId> = self
            .pending
            .iter()
            .filter(|(_, p)| p.deadline < now)
            .map(|(c, _)| c.clone())
            .collect();
        let mut out = Reaction::default();
        for client in expired {
            let pending = self.pending.remove(&client).expect("listed above");
            out.merge(self.expire(pending));
        }
        out
    }

    pub fn next_deadline(&self) -> Option<Timestamp> {
        self.pending.values().map(|p| p.deadline).min()
    }

    fn expire(&mut self, pending: PendingChallenge) -> Reaction {
        let fired = PrincipalEvent::TimerFired {
            client: pending.client.clone(),
            deadline: pending.deadline,
        };
        let mut out = Reaction::default().event(fired);
        out.merge(self.alert(pending.client, pending.requester_addr, Incident::Timeout));
        out
    }

    fn alert(&mut self, client: PrincipalId, suspect_addr: NetworkAddress, incident: Incident) -> Reaction {
        let report = AttackReport {
            reporter: self.id.clone(),
            suspect_addr,
            client,
            incident,
        };
        self.alerts_sent.push(report.clone());
        Reaction::default()
            .send(Outbound::to(
                Dest::Tgs(self.tgs.clone()),
                ProtocolMessage::M9(report.clone()),
            ))
            .event(PrincipalEvent::Alert(report))
    }

    fn grant(&mut self, client: PrincipalId, addr: &NetworkAddress, now: Timestamp) -> Reaction {
        self.grants.push(Grant {
            client: client.clone(),
            server: self.id.clone(),
            addr: addr.clone(),
            at: now,
        });
        Reaction::default().event(PrincipalEvent::Granted {
            client,
            server: self.id.clone(),
        })
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "role=v");
        let _ = writeln!(out, "id={}", self.id);
        let _ = writeln!(out, "variant={}", self.variant);
        for (c, k) in &self.forwarded_k3 {
            let _ = writeln!(out, "forwarded_k3.{c}={}", k.fingerprint());
        }
        for (c, p) in &self.pending {
            let _ = writeln!(out, "pending.{c}=deadline:{}", p.deadline);
        }
        for (i, g) in self.grants.iter().enumerate() {
            let _ = writeln!(out, "grant.{i}={}@{} t={}", g.client, g.addr, g.at);
        }
        for (i, a) in self.alerts_sent.iter().enumerate() {
            let _ = writeln!(out, "alert.{i}={} {}", a.client, a.incident);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_key, derive_long_term_key, CounterNonceSource};
    use crate::protocol::{make_authenticator, make_ticket_v, Lifetime};

    fn pid(s: &str) -> PrincipalId {
        PrincipalId::new(s).unwrap()
    }

    fn addr(s: &str) -> NetworkAddress {
        NetworkAddress::new(s).unwrap()
    }

    fn k_v() -> SymmetricKey {
        derive_long_term_key("v-secret", "v").unwrap()
    }

    fn session() -> SymmetricKey {
        derive_long_term_key("session", "alice").unwrap()
    }

    fn k3() -> SymmetricKey {
        derive_key("c", "alice", 3).unwrap()
    }

    fn server(variant: Variant) -> ServerState {
        let mut v = ServerState::new(
            pid("v"),
            k_v(),
            pid("tgs"),
            variant,
            Timing::default(),
            Entropy::seeded(1, "v"),
        );
        if variant == Variant::Triple {
            let mut n = CounterNonceSource::new([1; 16]);
            let fwd = ServerPasswordPart {
                client: pid("alice"),
                k3: k3(),
            }
            .seal(&k_v(), &mut n);
            v.handle_m4_2(&Envelope { enc: fwd }).unwrap();
        }
        v
    }

    fn m5(client: &str, ts: i64, n: &mut CounterNonceSource) -> ServiceRequest {
        let a = addr("10.0.0.1");
        ServiceRequest {
            ticket: make_ticket_v(
                &k_v(),
                &session(),
                &pid(client),
                &a,
                Lifetime::starting_at(Timestamp(0), 3600),
                n,
            ),
            authenticator: make_authenticator(&session(), &pid(client), &a, Timestamp(ts), n),
        }
    }

    fn m7(key: &SymmetricKey, t5: i64, n: &mut CounterNonceSource) -> Envelope {
        Envelope {
            enc: ChallengeResponse {
                k3: key.clone(),
                t5: Timestamp(t5),
            }
            .seal(&session(), n),
        }
    }

    fn challenge(v: &mut ServerState, now: i64) -> Reaction {
        let mut n = CounterNonceSource::new([2; 16]);
        v.handle(
            &ProtocolMessage::M5(m5("alice", now, &mut n)),
            &addr("10.0.0.1"),
            Timestamp(now),
        )
        .unwrap()
    }

    #[test]
    fn baseline_grants_immediately() {
        let mut v = server(Variant::Baseline);
        let mut n = CounterNonceSource::new([2; 16]);
        let r = v
            .handle(
                &ProtocolMessage::B5(m5("alice", 5, &mut n)),
                &addr("10.0.0.1"),
                Timestamp(6),
            )
            .unwrap();
        let ProtocolMessage::B6(env) = &r.outbound[0].msg else {
            panic!()
        };
        assert_eq!(
            MutualAuthBody::open(&session(), &env.enc).unwrap().t5_plus_1,
            Timestamp(6)
        );
        assert_eq!(v.grants.len(), 1);
    }

    #[test]
    fn m5_issues_challenge_then_correct_k3_grants() {
        let mut v = server(Variant::Triple);
        let r = challenge(&mut v, 10);
        let ProtocolMessage::M6(env) = &r.outbound[0].msg else {
            panic!()
        };
        let body = ChallengeBody::open(&session(), &env.enc).unwrap();
        assert_eq!(body.client, pid("alice"));
        assert_eq!(
            r.events,
            vec![PrincipalEvent::ChallengeIssued {
                client: pid("alice"),
                deadline: Timestamp(40)
            }]
        );
        assert!(v.grants.is_empty());

        let mut n = CounterNonceSource::new([3; 16]);
        let r = v
            .handle(
                &ProtocolMessage::M7(m7(&k3(), 12, &mut n)),
                &addr("10.0.0.1"),
                Timestamp(12),
            )
            .unwrap();
        let ProtocolMessage::M8(env) = &r.outbound[0].msg else {
            panic!()
        };
        assert_eq!(
            MutualAuthBody::open(&session(), &env.enc).unwrap().t5_plus_1,
            Timestamp(13)
        );
        assert_eq!(v.grants.len(), 1);
        assert!(v.pending.is_empty());
    }

    #[test]
    fn wrong_k3_raises_bad_password_and_clears() {
        let mut v = server(Variant::Triple);
        challenge(&mut v, 10);
        let wrong = derive_key("guess", "alice", 3).unwrap();
        let mut n = CounterNonceSource::new([3; 16]);
        let r = v
            .handle(
                &ProtocolMessage::M7(m7(&wrong, 12, &mut n)),
                &addr("10.0.0.9"),
                Timestamp(12),
            )
            .unwrap();
        assert_eq!(r.outbound.len(), 1);
        assert_eq!(r.outbound[0].dest, Dest::Tgs(pid("tgs")));
        let ProtocolMessage::M9(report) = &r.outbound[0].msg else {
            panic!()
        };
        assert_eq!(report.incident, Incident::BadPassword);
        assert_eq!(report.suspect_addr, addr("10.0.0.9"));
        assert!(v.grants.is_empty());
        assert!(v.pending.is_empty());
        // the timer does not fire afterwards
        assert_eq!(v.tick(Timestamp(100)), Reaction::default());
    }

    #[test]
    fn deadline_is_inclusive() {
        let mut v = server(Variant::Triple);
        challenge(&mut v, 10);
        assert_eq!(v.next_deadline(), Some(Timestamp(40)));
        assert_eq!(v.tick(Timestamp(40)), Reaction::default());
        let mut n = CounterNonceSource::new([3; 16]);
        assert!(v
            .handle(
                &ProtocolMessage::M7(m7(&k3(), 40, &mut n)),
                &addr("10.0.0.1"),
                Timestamp(40)
            )
            .is_ok());
        assert_eq!(v.grants.len(), 1);
    }

    #[test]
    fn silence_past_deadline_fires_timeout() {
        let mut v = server(Variant::Triple);
        challenge(&mut v, 10);
        let r = v.tick(Timestamp(41));
        assert_eq!(
            r.events[0],
            PrincipalEvent::TimerFired {
                client: pid("alice"),
                deadline: Timestamp(40)
            }
        );
        let ProtocolMessage::M9(report) = &r.outbound[0].msg else {
            panic!()
        };
        assert_eq!(report.incident, Incident::Timeout);
        assert_eq!(report.suspect_addr, addr("10.0.0.1"));
        assert_eq!(v.next_deadline(), None);

        let mut n = CounterNonceSource::new([3; 16]);
        assert_eq!(
            v.handle(
                &ProtocolMessage::M7(m7(&k3(), 41, &mut n)),
                &addr("10.0.0.1"),
                Timestamp(41)
            ),
            Err(DenyReason::NoPendingChallenge)
        );
        assert!(v.grants.is_empty());
    }

    #[test]
    fn late_m7_without_sweep_takes_timeout_path() {
        let mut v = server(Variant::Triple);
        challenge(&mut v, 10);
        let mut n = CounterNonceSource::new([3; 16]);
        let r = v
            .handle(
                &ProtocolMessage::M7(m7(&k3(), 50, &mut n)),
                &addr("10.0.0.1"),
                Timestamp(50),
            )
            .unwrap();
        let ProtocolMessage::M9(report) = &r.outbound[0].msg else {
            panic!()
        };
        assert_eq!(report.incident, Incident::Timeout);
        assert!(v.grants.is_empty());
    }

    #[test]
    fn second_m5_while_pending_is_refused() {
        let mut v = server(Variant::Triple);
        challenge(&mut v, 10);
        let mut n = CounterNonceSource::new([4; 16]);
        assert_eq!(
            v.handle(
                &ProtocolMessage::M5(m5("alice", 11, &mut n)),
                &addr("10.0.0.1"),
                Timestamp(11)
            ),
            Err(DenyReason::ChallengeAlreadyPending(pid("alice")))
        );
    }

    #[test]
    fn m7_under_unknown_key_leaves_challenge_pending() {
        let mut v = server(Variant::Triple);
        challenge(&mut v, 10);
        let mut n = CounterNonceSource::new([3; 16]);
        let env = Envelope {
            enc: ChallengeResponse {
                k3: k3(),
                t5: Timestamp(1),
            }
            .seal(&k_v(), &mut n),
        };
        assert_eq!(
            v.handle(&ProtocolMessage::M7(env), &addr("10.0.0.1"), Timestamp(12)),
            Err(DenyReason::EnvelopeAuthFailure(MessageKind::M7))
        );
        assert_eq!(v.pending.len(), 1);
    }

    #[test]
    fn missing_forwarded_k3_counts_as_bad_password() {
        let mut v = ServerState::new(
            pid("v"),
            k_v(),
            pid("tgs"),
            Variant::Triple,
            Timing::default(),
            Entropy::seeded(1, "v"),
        );
        challenge(&mut v, 10);
        let mut n = CounterNonceSource::new([3; 16]);
        let r = v
            .handle(
                &ProtocolMessage::M7(m7(&k3(), 12, &mut n)),
                &addr("10.0.0.1"),
                Timestamp(12),
            )
            .unwrap();
        assert_eq!(v.alerts_sent[0].incident, Incident::BadPassword);
        assert!(matches!(r.outbound[0].msg, ProtocolMessage::M9(_)));
    }

    #[test]
    fn triple_server_rejects_baseline_messages() {
        let mut v = server(Variant::Triple);
        let mut n = CounterNonceSource::new([4; 16]);
        assert_eq!(
            v.handle(
                &ProtocolMessage::B5(m5("alice", 1, &mut n)),
                &addr("10.0.0.1"),
                Timestamp(1)
            ),
            Err(DenyReason::WrongVariant(MessageKind::B5))
        );
    }
}
