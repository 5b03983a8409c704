use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{
    expect_variant, verify_presentation, CompromiseNotice, DenyReason, Dest, Outbound, PrincipalEvent, Reaction,
    SuspectedCompromise, Timing, Variant,
};
use crate::crypto::{derive_key, CryptoError, Entropy, SymmetricKey};
use crate::protocol::{
    make_ticket_tgs, make_ticket_v, open_ticket_tgs, AttackReport, Envelope, Incident, Lifetime, MessageKind,
    NetworkAddress, PasswordBundle, PrincipalId, ProtocolMessage, Sealable, ServerPasswordPart, ServiceReplyPart,
    ServiceTicketReply, ServiceTicketRequest, TgtReply, TgtReplyPart, TicketRequest, Timestamp,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistrationError {
    #[error("client {0} already registered")]
    DuplicateClient(PrincipalId),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// The three password-derived keys the AS holds for one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialRecord {
    pub client: PrincipalId,
    pub k1: SymmetricKey,
    pub k2: SymmetricKey,
    pub k3: SymmetricKey,
}

impl CredentialRecord {
    /// Equal passwords are allowed; the index in the KDF keeps the keys distinct.
    pub fn from_passwords(client: &PrincipalId, pw1: &str, pw2: &str, pw3: &str) -> Result<Self, CryptoError> {
        Ok(Self {
            client: client.clone(),
            k1: derive_key(pw1, client.as_str(), 1)?,
            k2: derive_key(pw2, client.as_str(), 2)?,
            k3: derive_key(pw3, client.as_str(), 3)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AsState {
    pub credentials: BTreeMap<PrincipalId, CredentialRecord>,
    pub tgs_keys: BTreeMap<PrincipalId, SymmetricKey>,
    pub alerts_received: Vec<AttackReport>,
    pub notices: Vec<CompromiseNotice>,
    pub variant: Variant,
    timing: Timing,
    entropy: Entropy,
}

impl AsState {
    pub fn new(variant: Variant, timing: Timing, entropy: Entropy) -> Self {
        Self {
            credentials: BTreeMap::new(),
            tgs_keys: BTreeMap::new(),
            alerts_received: Vec::new(),
            notices: Vec::new(),
            variant,
            timing,
            entropy,
        }
    }

    pub fn add_tgs(&mut self, id: PrincipalId, key: SymmetricKey) {
        self.tgs_keys.insert(id, key);
    }

    pub fn register(&mut self, client: &PrincipalId, pw1: &str, pw2: &str, pw3: &str) -> Result<(), RegistrationError> {
        let record = CredentialRecord::from_passwords(client, pw1, pw2, pw3)?;
        self.register_record(record)
    }

    pub fn register_record(&mut self, record: CredentialRecord) -> Result<(), RegistrationError> {
        if self.credentials.contains_key(&record.client) {
            return Err(RegistrationError::DuplicateClient(record.client));
        }
        self.credentials.insert(record.client.clone(), record);
        Ok(())
    }

    pub fn handle(
        &mut self,
        msg: &ProtocolMessage,
        src_addr: &NetworkAddress,
        now: Timestamp,
    ) -> Result<Reaction, DenyReason> {
        expect_variant(msg.kind(), self.variant)?;
        match msg {
            ProtocolMessage::M1(req) | ProtocolMessage::B1(req) => self.handle_ticket_request(req, src_addr, now),
            ProtocolMessage::M10(report) => Ok(self.handle_m10(report, now)),
            other => Err(DenyReason::Unexpected(other.kind())),
        }
    }

    /// M1 → M2_1 (+ M2_2 to the TGS in the triple variant); B1 → B2.
    pub fn handle_ticket_request(
        &mut self,
        req: &TicketRequest,
        src_addr: &NetworkAddress,
        now: Timestamp,
    ) -> Result<Reaction, DenyReason> {
        let record = self
            .credentials
            .get(&req.client)
            .ok_or_else(|| DenyReason::UnknownClient(req.client.clone()))?;
        let k_tgs = self
            .tgs_keys
            .get(&req.target_tgs)
            .ok_or_else(|| DenyReason::UnknownTgs(req.target_tgs.clone()))?;

        let session_key = self.entropy.session_key();
        let max_expiry = now.plus(self.timing.tgt_lifetime);
        let expiry = req.requested_lifetime.expiry().clamp(now, max_expiry);
        let validity = Lifetime::new(now, expiry).expect("expiry clamped to >= now");

        let ticket = make_ticket_tgs(k_tgs, &req.client, src_addr, validity, &session_key, &mut self.entropy);
        let enc = TgtReplyPart {
            session_key,
            target_tgs: req.target_tgs.clone(),
            n1: req.n1,
            validity,
        }
        .seal(&record.k1, &mut self.entropy);
        let reply = TgtReply {
            client: req.client.clone(),
            ticket,
            enc,
        };

        Ok(match self.variant {
            Variant::Baseline => Reaction::default().send(Outbound::reply(ProtocolMessage::B2(reply))),
            Variant::Triple => {
                let forward = PasswordBundle {
                    client: req.client.clone(),
                    k2: record.k2.clone(),
                    k3: record.k3.clone(),
                }
                .seal(k_tgs, &mut self.entropy);
                Reaction::default()
                    .send(Outbound::reply(ProtocolMessage::M2_1(reply)))
                    .send(Outbound::to(
                        Dest::Tgs(req.target_tgs.clone()),
                        ProtocolMessage::M2_2(Envelope { enc: forward }),
                    ))
            }
        })
    }

    /// Records the forwarded report and raises a compromise notice.
    pub fn handle_m10(&mut self, report: &AttackReport, now: Timestamp) -> Reaction {
        self.alerts_received.push(report.clone());
        let notice = CompromiseNotice {
            client: report.client.clone(),
            reporter: report.reporter.clone(),
            suspect_addr: report.suspect_addr.clone(),
            incident: report.incident,
            suspected: match report.incident {
                Incident::BadPassword => SuspectedCompromise::Password,
                Incident::Timeout => SuspectedCompromise::TicketReplay,
            },
            unknown_client: !self.credentials.contains_key(&report.client),
            at: now,
        };
        self.notices.push(notice.clone());
        Reaction::default().event(PrincipalEvent::Notice(notice))
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "role=as");
        let _ = writeln!(out, "variant={}", self.variant);
        for (c, rec) in &self.credentials {
            let _ = writeln!(
                out,
                "credential.{c}={},{},{}",
                rec.k1.fingerprint(),
                rec.k2.fingerprint(),
                rec.k3.fingerprint()
            );
        }
        let tgs: Vec<_> = self.tgs_keys.keys().map(|k| k.as_str()).collect();
        let _ = writeln!(out, "tgs={}", tgs.join(","));
        let _ = writeln!(out, "alerts_received={}", self.alerts_received.len());
        for (i, n) in self.notices.iter().enumerate() {
            let _ = writeln!(out, "notice.{i}={n}");
        }
        out
    }
}

/// The two passwords the TGS receives in M2_2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardedPasswords {
    pub k2: SymmetricKey,
    pub k3: SymmetricKey,
}

#[derive(Debug, Clone)]
pub struct TgsState {
    pub id: PrincipalId,
    pub own_key: SymmetricKey,
    pub server_keys: BTreeMap<PrincipalId, SymmetricKey>,
    pub forwarded_passwords: BTreeMap<PrincipalId, ForwardedPasswords>,
    pub variant: Variant,
    timing: Timing,
    entropy: Entropy,
}

impl TgsState {
    pub fn new(id: PrincipalId, own_key: SymmetricKey, variant: Variant, timing: Timing, entropy: Entropy) -> Self {
        Self {
            id,
            own_key,
            server_keys: BTreeMap::new(),
            forwarded_passwords: BTreeMap::new(),
            variant,
            timing,
            entropy,
        }
    }

    pub fn add_server(&mut self, id: PrincipalId, key: SymmetricKey) {
        self.server_keys.insert(id, key);
    }

    pub fn handle(
        &mut self,
        msg: &ProtocolMessage,
        src_addr: &NetworkAddress,
        now: Timestamp,
    ) -> Result<Reaction, DenyReason> {
        expect_variant(msg.kind(), self.variant)?;
        match msg {
            ProtocolMessage::M2_2(env) => self.handle_m2_2(env).map(|_| Reaction::default()),
            ProtocolMessage::M3(req) | ProtocolMessage::B3(req) => {
                self.handle_service_ticket_request(req, src_addr, now)
            }
            ProtocolMessage::M9(report) => Ok(self.handle_m9(report)),
            other => Err(DenyReason::Unexpected(other.kind())),
        }
    }

    /// Stores k2/k3 for the client. A later bundle for the same client replaces it.
    pub fn handle_m2_2(&mut self, env: &Envelope) -> Result<(), DenyReason> {
        let bundle =
            PasswordBundle::open(&self.own_key, &env.enc).map_err(|e| DenyReason::envelope(MessageKind::M2_2, e))?;
        self.forwarded_passwords.insert(
            bundle.client,
            ForwardedPasswords {
                k2: bundle.k2,
                k3: bundle.k3,
            },
        );
        Ok(())
    }

    /// M3 → M4_1 (+ M4_2 to V); B3 → B4.
    pub fn handle_service_ticket_request(
        &mut self,
        req: &ServiceTicketRequest,
        src_addr: &NetworkAddress,
        now: Timestamp,
    ) -> Result<Reaction, DenyReason> {
        let tgt = open_ticket_tgs(&self.own_key, &req.ticket).map_err(|_| DenyReason::TicketAuthFailure)?;
        let tgt_expiry = tgt.validity.expiry();
        let claims = tgt.into();
        verify_presentation(&claims, &req.authenticator, src_addr, now, self.timing.freshness_window)?;
        let k_v = self
            .server_keys
            .get(&req.target_v)
            .ok_or_else(|| DenyReason::UnknownServer(req.target_v.clone()))?;

        let reply_key = match self.variant {
            Variant::Baseline => claims.session_key.clone(),
            Variant::Triple => self
                .forwarded_passwords
                .get(&claims.client)
                .ok_or_else(|| DenyReason::NoForwardedPassword(claims.client.clone()))?
                .k2
                .clone(),
        };

        let session_key = self.entropy.session_key();
        let expiry = now.plus(self.timing.service_lifetime).min(tgt_expiry);
        let validity = Lifetime::new(now, expiry.max(now)).expect("expiry >= now");
        let ticket = make_ticket_v(
            k_v,
            &session_key,
            &claims.client,
            &claims.client_addr,
            validity,
            &mut self.entropy,
        );
        let enc = ServiceReplyPart {
            n2: req.n2,
            target_v: req.target_v.clone(),
            session_key,
            validity,
        }
        .seal(&reply_key, &mut self.entropy);
        let reply = ServiceTicketReply {
            client: claims.client.clone(),
            ticket,
            enc,
        };

        Ok(match self.variant {
            Variant::Baseline => Reaction::default().send(Outbound::reply(ProtocolMessage::B4(reply))),
            Variant::Triple => {
                let k3 = self.forwarded_passwords[&claims.client].k3.clone();
                let forward = ServerPasswordPart {
                    client: claims.client.clone(),
                    k3,
                }
                .seal(k_v, &mut self.entropy);
                Reaction::default()
                    .send(Outbound::reply(ProtocolMessage::M4_1(reply)))
                    .send(Outbound::to(
                        Dest::Server(req.target_v.clone()),
                        ProtocolMessage::M4_2(Envelope { enc: forward }),
                    ))
            }
        })
    }

    /// Forwards V's report to the AS unchanged.
    pub fn handle_m9(&self, report: &AttackReport) -> Reaction {
        Reaction::default().send(Outbound::to(Dest::As, ProtocolMessage::M10(report.clone())))
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "role=tgs");
        let _ = writeln!(out, "id={}", self.id);
        let _ = writeln!(out, "variant={}", self.variant);
        let servers: Vec<_> = self.server_keys.keys().map(|k| k.as_str()).collect();
        let _ = writeln!(out, "servers={}", servers.join(","));
        for (c, f) in &self.forwarded_passwords {
            let _ = writeln!(out, "forwarded.{c}={},{}", f.k2.fingerprint(), f.k3.fingerprint());
        }
        out
    }
}
