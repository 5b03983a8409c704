//! Deterministic discrete-event network with an interposing attacker.
//!
//! Time is an integer tick. Every frame costs its link latency (default 1).
//! The queue is ordered by `(tick, seq)`; when time advances, every service
//! principal's deadline sweep runs before anything is delivered at the new
//! tick. A run ends at quiescence (empty queue, no pending challenge) or at
//! `max_ticks`.

mod adversary;
pub mod matrix;
mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

pub use adversary::{
    attacker_closure, keys_in_plaintext, recovered_challenge_answers, Capability, ChallengeStrategy, FrameRef,
    KnowledgeRef, ScriptedAction,
};
pub use scenario::{
    bundled, ActionSpec, AdversarySpec, ClientSpec, Expectation, KeyedNodeSpec, Limits, NodeSpec, PrincipalsSpec,
    ScenarioError, ScenarioSpec, TimingSpec, VariantSection, BUNDLED,
};

use crate::crypto::{derive_key, Entropy, SymmetricKey};
use crate::principals::{
    AsState, ClientConfig, ClientOutcome, ClientState, CompromiseNotice, Dest, Principal, PrincipalEvent, Reaction,
    ServerState, TgsState, Variant,
};
use crate::protocol::{
    decode, encode, make_authenticator, ChallengeBody, ChallengeResponse, Envelope, Incident, NetworkAddress, Nonce,
    PrincipalId, ProtocolMessage, Sealable, ServiceReplyPart, ServiceRequest, ServiceTicketRequest, Timestamp,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Deliver,
    Drop,
    Replay,
    Inject,
    TimerFire,
    Grant,
    Alert,
    Notice,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Send => "send",
            EventKind::Deliver => "deliver",
            EventKind::Drop => "drop",
            EventKind::Replay => "replay",
            EventKind::Inject => "inject",
            EventKind::TimerFire => "timer_fire",
            EventKind::Grant => "grant",
            EventKind::Alert => "alert",
            EventKind::Notice => "notice",
        })
    }
}

/// One trace line. Field order here is the serialized order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: i64,
    pub seq: u64,
    pub kind: EventKind,
    pub src: String,
    pub dst: String,
    pub src_addr: String,
    pub msg: String,
    pub meta: String,
    /// Encoded frame, hex. Absent from the canonical form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<SimEvent>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        self.render(false)
    }

    /// Plaintext-level lines only: the same for every implementation that
    /// makes the same protocol decisions.
    pub fn canonical_jsonl(&self) -> String {
        self.render(true)
    }

    fn render(&self, canonical: bool) -> String {
        let mut out = String::new();
        for ev in &self.events {
            let line = if canonical {
                serde_json::to_string(&SimEvent {
                    frame: None,
                    ..ev.clone()
                })
            } else {
                serde_json::to_string(ev)
            };
            out.push_str(&line.expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Trace { events })
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// deliver + drop = send + replay + inject
    pub fn conservation_holds(&self) -> bool {
        use EventKind::*;
        self.count(Deliver) + self.count(Drop) == self.count(Send) + self.count(Replay) + self.count(Inject)
    }

    /// Messages put on the wire by `node`, decoded from the recorded frames.
    pub fn sent_by(&self, node: &str) -> Vec<ProtocolMessage> {
        self.events
            .iter()
            .filter(|e| e.src == node && matches!(e.kind, EventKind::Send | EventKind::Replay | EventKind::Inject))
            .filter_map(|e| e.frame.as_deref())
            .filter_map(|h| hex::decode(h).ok())
            .filter_map(|b| decode(&b).ok())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantRecord {
    /// The node V actually answered, which is not always the client named in the ticket.
    pub node: String,
    pub client: String,
    pub server: String,
    pub tick: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlertRecord {
    pub incident: Incident,
    pub client: String,
    pub suspect_addr: String,
    pub reporter: String,
    pub tick: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeRecord {
    pub server: String,
    pub client: String,
    pub issued: i64,
    /// `grant` or the alert incident, with the tick it happened.
    pub resolution: Option<(String, i64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub service_granted_to: Vec<GrantRecord>,
    pub alerts: Vec<AlertRecord>,
    pub compromise_notices: Vec<CompromiseNotice>,
    pub attacker_succeeded: bool,
    pub client_outcomes: BTreeMap<String, Option<ClientOutcome>>,
    pub challenges: Vec<ChallengeRecord>,
    /// Grants or alerts that matched no open challenge.
    pub accounting_errors: Vec<String>,
    pub quiescent: bool,
    pub final_tick: i64,
}

impl Verdict {
    pub fn granted_nodes(&self) -> Vec<String> {
        self.service_granted_to.iter().map(|g| g.node.clone()).collect()
    }

    /// Every challenge ended in exactly one grant or one alert.
    pub fn challenges_resolved_once(&self) -> bool {
        self.accounting_errors.is_empty() && self.challenges.iter().all(|c| c.resolution.is_some())
    }

    pub fn summary(&self) -> String {
        let granted = self.granted_nodes();
        let alerts: Vec<String> = self
            .alerts
            .iter()
            .map(|a| format!("{}:{}@{}", a.incident, a.client, a.tick))
            .collect();
        format!(
            "attacker_succeeded={} alerts={} granted_to={} alert_detail={} notices={} challenges={} ticks={} quiescent={}",
            self.attacker_succeeded,
            self.alerts.len(),
            if granted.is_empty() { "-".into() } else { granted.join(",") },
            if alerts.is_empty() { "-".into() } else { alerts.join(",") },
            self.compromise_notices.len(),
            self.challenges.len(),
            self.final_tick,
            self.quiescent,
        )
    }
}

pub struct Node {
    pub label: String,
    pub addr: NetworkAddress,
    pub principal: Principal,
}

struct Attacker {
    spec: AdversarySpec,
    addr: NetworkAddress,
    victim_addr: NetworkAddress,
    /// Tapped and received frames, in order.
    observed: Vec<ProtocolMessage>,
    /// Password and long-term keys, fixed at setup.
    static_keys: BTreeMap<KnowledgeRef, SymmetricKey>,
    entropy: Entropy,
}

enum Scheduled {
    Frame {
        src: String,
        dst: String,
        src_addr: NetworkAddress,
        bytes: Vec<u8>,
    },
    Start(String),
    Action(usize),
}

pub struct World {
    now: i64,
    queue_seq: u64,
    variant: Variant,
    timing: TimingSpec,
    max_ticks: i64,
    nodes: BTreeMap<String, Node>,
    as_label: String,
    queue: BTreeMap<(i64, u64), Scheduled>,
    trace: Trace,
    attacker: Option<Attacker>,
    grants: Vec<GrantRecord>,
    alerts: Vec<AlertRecord>,
    notices: Vec<CompromiseNotice>,
    challenges: Vec<ChallengeRecord>,
    accounting_errors: Vec<String>,
}

pub struct RunOutput {
    pub trace: Trace,
    pub verdict: Verdict,
    pub world: World,
}

/// Runs `scenario` to quiescence or `max_ticks`.
pub fn run_scenario(scenario: &ScenarioSpec, seed: u64) -> Result<RunOutput, ScenarioError> {
    let mut world = World::new(scenario, seed)?;
    let quiescent = world.run();
    let verdict = world.verdict(quiescent);
    let trace = world.trace.clone();
    Ok(RunOutput { trace, verdict, world })
}

fn pid(s: &str) -> Result<PrincipalId, ScenarioError> {
    PrincipalId::new(s).map_err(|e| ScenarioError::Invalid(format!("{s:?}: {e}")))
}

fn addr(s: &str) -> Result<NetworkAddress, ScenarioError> {
    NetworkAddress::new(s).map_err(|e| ScenarioError::Invalid(format!("{s:?}: {e}")))
}

impl World {
    pub fn new(spec: &ScenarioSpec, seed: u64) -> Result<Self, ScenarioError> {
        spec.validate()?;
        let variant = spec.variant();
        let timing = spec.timing.principal_timing();
        let p = &spec.principals;
        let tgs_id = pid(&p.tgs.id)?;
        let k_tgs = p.tgs.long_term_key()?;
        let mut nodes = BTreeMap::new();

        let mut kdc = AsState::new(variant, timing, Entropy::seeded(seed, &p.kdc.id));
        kdc.add_tgs(tgs_id.clone(), k_tgs.clone());
        for c in &p.clients {
            let [a, b, d] = &c.passwords;
            kdc.register(&pid(&c.id)?, a, b, d)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        nodes.insert(
            p.kdc.id.clone(),
            Node {
                label: p.kdc.id.clone(),
                addr: addr(&p.kdc.addr)?,
                principal: Principal::As(kdc),
            },
        );

        let mut tgs = TgsState::new(
            tgs_id.clone(),
            k_tgs.clone(),
            variant,
            timing,
            Entropy::seeded(seed, &p.tgs.id),
        );
        let mut long_term = BTreeMap::from([(p.tgs.id.clone(), k_tgs)]);
        for s in &p.servers {
            let k_v = s.long_term_key()?;
            tgs.add_server(pid(&s.id)?, k_v.clone());
            long_term.insert(s.id.clone(), k_v.clone());
            let v = ServerState::new(
                pid(&s.id)?,
                k_v,
                tgs_id.clone(),
                variant,
                timing,
                Entropy::seeded(seed, &s.id),
            );
            nodes.insert(
                s.id.clone(),
                Node {
                    label: s.id.clone(),
                    addr: addr(&s.addr)?,
                    principal: Principal::Server(v),
                },
            );
        }
        nodes.insert(
            p.tgs.id.clone(),
            Node {
                label: p.tgs.id.clone(),
                addr: addr(&p.tgs.addr)?,
                principal: Principal::Tgs(tgs),
            },
        );

        for c in &p.clients {
            let id = pid(&c.id)?;
            let key = |i: u8| {
                derive_key(&c.passwords[i as usize - 1], &c.id, i).map_err(|e| ScenarioError::Invalid(e.to_string()))
            };
            let config = ClientConfig {
                id,
                addr: addr(&c.addr)?,
                tgs: tgs_id.clone(),
                server: pid(&c.target)?,
                keys: [key(1)?, key(2)?, key(3)?],
                variant,
                timing,
            };
            let client = ClientState::new(config, Entropy::seeded(seed, &c.id));
            nodes.insert(
                c.id.clone(),
                Node {
                    label: c.id.clone(),
                    addr: addr(&c.addr)?,
                    principal: Principal::Client(client),
                },
            );
        }

        let attacker = match &spec.adversary {
            None => None,
            Some(adv) => {
                let victim = adv.impersonate.as_deref().unwrap_or(&p.clients[0].id);
                let victim_addr = nodes[victim].addr.clone();
                let mut static_keys = BTreeMap::new();
                for k in &adv.knowledge {
                    match k {
                        KnowledgeRef::PasswordKey { client, index } => {
                            let c = p.clients.iter().find(|c| &c.id == client).expect("validated");
                            let key = derive_key(&c.passwords[*index as usize - 1], client, *index)
                                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                            static_keys.insert(k.clone(), key);
                        }
                        KnowledgeRef::LongTerm(n) => {
                            static_keys.insert(k.clone(), long_term[n].clone());
                        }
                        KnowledgeRef::SessionCTgs(_) | KnowledgeRef::SessionCV(_) => {}
                    }
                }
                Some(Attacker {
                    spec: adv.clone(),
                    addr: addr(&adv.addr)?,
                    victim_addr,
                    observed: Vec::new(),
                    static_keys,
                    entropy: Entropy::seeded(seed, &format!("adversary:{}", adv.node)),
                })
            }
        };

        let mut world = World {
            now: 0,
            queue_seq: 0,
            variant,
            timing: spec.timing.clone(),
            max_ticks: spec.limits.max_ticks,
            nodes,
            as_label: p.kdc.id.clone(),
            queue: BTreeMap::new(),
            trace: Trace::default(),
            attacker,
            grants: Vec::new(),
            alerts: Vec::new(),
            notices: Vec::new(),
            challenges: Vec::new(),
            accounting_errors: Vec::new(),
        };
        for c in &p.clients {
            world.schedule(c.start_at, Scheduled::Start(c.id.clone()));
        }
        if let Some(adv) = &spec.adversary {
            for (i, a) in adv.actions.iter().enumerate() {
                world.schedule(a.at, Scheduled::Action(i));
            }
        }
        Ok(world)
    }

    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn node(&self, label: &str) -> Option<&Node> {
        self.nodes.get(label)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn client(&self, label: &str) -> Option<&ClientState> {
        self.nodes.get(label)?.principal.as_client()
    }

    pub fn server(&self, label: &str) -> Option<&ServerState> {
        self.nodes.get(label)?.principal.as_server()
    }

    pub fn tgs(&self) -> Option<&TgsState> {
        self.nodes.values().find_map(|n| n.principal.as_tgs())
    }

    pub fn kdc(&self) -> &AsState {
        self.nodes[&self.as_label].principal.as_kdc().expect("as node")
    }

    pub fn attacker_label(&self) -> Option<&str> {
        self.attacker.as_ref().map(|a| a.spec.node.as_str())
    }

    /// Frames the attacker has seen, in order.
    pub fn attacker_observed(&self) -> &[ProtocolMessage] {
        self.attacker.as_ref().map(|a| a.observed.as_slice()).unwrap_or(&[])
    }

    /// Named knowledge resolved against the current world, then closed over
    /// everything observed.
    pub fn attacker_knowledge(&self) -> BTreeSet<SymmetricKey> {
        let Some(att) = &self.attacker else {
            return BTreeSet::new();
        };
        let mut base: BTreeSet<SymmetricKey> = att.static_keys.values().cloned().collect();
        for k in &att.spec.knowledge {
            let key = match k {
                KnowledgeRef::SessionCTgs(c) => self.client(c).and_then(|c| c.tgs_session_key()),
                KnowledgeRef::SessionCV(c) => self.client(c).and_then(|c| c.service_session_key()),
                _ => None,
            };
            base.extend(key.cloned());
        }
        attacker_closure(&base, &att.observed)
    }

    fn schedule(&mut self, tick: i64, item: Scheduled) {
        self.queue.insert((tick, self.queue_seq), item);
        self.queue_seq += 1;
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        kind: EventKind,
        src: &str,
        dst: &str,
        src_addr: &str,
        msg: String,
        meta: String,
        frame: Option<&[u8]>,
    ) {
        let seq = self.trace.events.len() as u64;
        self.trace.events.push(SimEvent {
            tick: self.now,
            seq,
            kind,
            src: src.to_string(),
            dst: dst.to_string(),
            src_addr: src_addr.to_string(),
            msg,
            meta,
            frame: frame.map(hex::encode),
        });
    }

    fn next_timer(&self) -> Option<i64> {
        self.nodes
            .values()
            .filter_map(|n| n.principal.next_deadline())
            .map(|d| d.0 + 1)
            .min()
    }

    /// Returns whether the run reached quiescence.
    fn run(&mut self) -> bool {
        loop {
            let head = self.queue.keys().next().map(|k| k.0);
            let timer = self.next_timer();
            let target = match (head, timer) {
                (None, None) => return true,
                (Some(h), None) => h,
                (None, Some(t)) => t,
                (Some(h), Some(t)) => h.min(t),
            };
            if target > self.now {
                if target > self.max_ticks {
                    return false;
                }
                self.now = target;
                self.sweep();
                continue;
            }
            if timer.is_some_and(|t| t <= self.now) {
                self.sweep();
                continue;
            }
            let (_, item) = self.queue.pop_first().expect("head exists");
            match item {
                Scheduled::Frame {
                    src,
                    dst,
                    src_addr,
                    bytes,
                } => self.deliver(&src, &dst, &src_addr, &bytes),
                Scheduled::Start(label) => {
                    let now = Timestamp(self.now);
                    let reaction = match &mut self.nodes.get_mut(&label).expect("client node").principal {
                        Principal::Client(c) => c.start(now),
                        _ => unreachable!("start scheduled for a client"),
                    };
                    self.apply(&label, None, reaction);
                }
                Scheduled::Action(i) => self.run_action(i),
            }
        }
    }

    fn sweep(&mut self) {
        let now = Timestamp(self.now);
        let labels: Vec<String> = self.nodes.keys().cloned().collect();
        for label in labels {
            let reaction = self.nodes.get_mut(&label).expect("listed").principal.tick(now);
            if reaction != Reaction::default() {
                self.apply(&label, None, reaction);
            }
        }
    }

    fn deliver(&mut self, src: &str, dst: &str, src_addr: &NetworkAddress, bytes: &[u8]) {
        let msg = match decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.record(
                    EventKind::Drop,
                    src,
                    dst,
                    src_addr.as_str(),
                    String::new(),
                    format!("undecodable: {e}"),
                    Some(bytes),
                );
                return;
            }
        };
        if self.attacker_label() == Some(dst) {
            self.record(
                EventKind::Deliver,
                src,
                dst,
                src_addr.as_str(),
                msg.describe(),
                String::new(),
                Some(bytes),
            );
            self.attacker_receive(src, msg);
            return;
        }
        let now = Timestamp(self.now);
        let Some(node) = self.nodes.get_mut(dst) else {
            self.record(
                EventKind::Drop,
                src,
                dst,
                src_addr.as_str(),
                msg.describe(),
                "unknown node".into(),
                Some(bytes),
            );
            return;
        };
        match node.principal.handle(&msg, src_addr, now) {
            Ok(reaction) => {
                self.record(
                    EventKind::Deliver,
                    src,
                    dst,
                    src_addr.as_str(),
                    msg.describe(),
                    String::new(),
                    Some(bytes),
                );
                self.apply(dst, Some(src), reaction);
            }
            Err(reason) => {
                self.record(
                    EventKind::Drop,
                    src,
                    dst,
                    src_addr.as_str(),
                    msg.describe(),
                    reason.to_string(),
                    Some(bytes),
                );
            }
        }
    }

    /// Records a principal's events and puts its messages on the wire.
    /// `sender` is the node whose message produced the reaction.
    fn apply(&mut self, from: &str, sender: Option<&str>, reaction: Reaction) {
        for ev in reaction.events {
            match ev {
                PrincipalEvent::ChallengeIssued { client, .. } => {
                    self.challenges.push(ChallengeRecord {
                        server: from.to_string(),
                        client: client.to_string(),
                        issued: self.now,
                        resolution: None,
                    });
                }
                PrincipalEvent::Granted { client, server } => {
                    let grantee = sender.unwrap_or(from).to_string();
                    if self.variant == Variant::Triple {
                        self.resolve_challenge(from, client.as_str(), "grant");
                    }
                    self.grants.push(GrantRecord {
                        node: grantee.clone(),
                        client: client.to_string(),
                        server: server.to_string(),
                        tick: self.now,
                    });
                    self.record(
                        EventKind::Grant,
                        from,
                        &grantee,
                        "",
                        String::new(),
                        format!("client={client} server={server}"),
                        None,
                    );
                }
                PrincipalEvent::Alert(report) => {
                    self.resolve_challenge(from, report.client.as_str(), report.incident.as_str());
                    self.alerts.push(AlertRecord {
                        incident: report.incident,
                        client: report.client.to_string(),
                        suspect_addr: report.suspect_addr.to_string(),
                        reporter: report.reporter.to_string(),
                        tick: self.now,
                    });
                    let meta = format!(
                        "incident={} client={} suspect_addr={}",
                        report.incident, report.client, report.suspect_addr
                    );
                    self.record(EventKind::Alert, from, "", "", String::new(), meta, None);
                }
                PrincipalEvent::TimerFired { client, deadline } => {
                    let meta = format!("client={client} deadline={deadline}");
                    self.record(EventKind::TimerFire, from, "", "", String::new(), meta, None);
                }
                PrincipalEvent::Notice(notice) => {
                    self.record(EventKind::Notice, from, "", "", String::new(), notice.to_string(), None);
                    self.notices.push(notice);
                }
                PrincipalEvent::ClientDone(_) => {}
            }
        }
        let from_addr = self.nodes[from].addr.clone();
        // same order as the daemons: forwards first, then the reply
        let (replies, forwards): (Vec<_>, Vec<_>) = reaction.outbound.into_iter().partition(|o| o.dest == Dest::Reply);
        for out in forwards.into_iter().chain(replies) {
            let dst = match &out.dest {
                Dest::Reply => sender.expect("reply only in response to a message").to_string(),
                Dest::As => self.as_label.clone(),
                Dest::Tgs(id) | Dest::Server(id) => id.to_string(),
            };
            self.put_on_wire(EventKind::Send, from, &dst, &from_addr, &out.msg);
        }
    }

    fn resolve_challenge(&mut self, server: &str, client: &str, how: &str) {
        let now = self.now;
        match self
            .challenges
            .iter_mut()
            .find(|c| c.server == server && c.client == client && c.resolution.is_none())
        {
            Some(c) => c.resolution = Some((how.to_string(), now)),
            None => self.accounting_errors.push(format!(
                "{how} at {server} for {client} (tick {now}) matches no open challenge"
            )),
        }
    }

    fn put_on_wire(&mut self, kind: EventKind, src: &str, dst: &str, src_addr: &NetworkAddress, msg: &ProtocolMessage) {
        let bytes = encode(msg);
        if kind == EventKind::Send {
            if let Some(att) = &mut self.attacker {
                if att.spec.can(Capability::Capture) {
                    att.observed.push(msg.clone());
                }
            }
        }
        self.record(
            kind,
            src,
            dst,
            src_addr.as_str(),
            msg.describe(),
            String::new(),
            Some(&bytes),
        );
        let at = self.now + self.timing.latency(src, dst);
        self.schedule(
            at,
            Scheduled::Frame {
                src: src.to_string(),
                dst: dst.to_string(),
                src_addr: src_addr.clone(),
                bytes,
            },
        );
    }

    fn attacker_send(&mut self, kind: EventKind, dst: &str, msg: &ProtocolMessage) {
        let att = self.attacker.as_ref().expect("attacker present");
        let src_addr = if att.spec.can(Capability::SpoofAddr) {
            att.victim_addr.clone()
        } else {
            att.addr.clone()
        };
        let label = att.spec.node.clone();
        self.put_on_wire(kind, &label, dst, &src_addr, msg);
    }

    fn nth_observed(&self, frame: FrameRef) -> Option<ProtocolMessage> {
        self.attacker_observed()
            .iter()
            .filter(|m| m.kind() == frame.kind)
            .nth(frame.index - 1)
            .cloned()
    }

    fn run_action(&mut self, i: usize) {
        let action = self.attacker.as_ref().expect("actions imply attacker").spec.actions[i]
            .action
            .clone();
        match &action {
            ScriptedAction::Replay { frame, to } => match self.nth_observed(*frame) {
                Some(msg) => self.attacker_send(EventKind::Replay, to, &msg),
                None => log::warn!("tick {}: {action}: no such captured frame", self.now),
            },
            ScriptedAction::ForgeM3 { ticket, key, target } => {
                let reply = match self.nth_observed(*ticket) {
                    Some(ProtocolMessage::M2_1(r) | ProtocolMessage::B2(r)) => r,
                    _ => {
                        log::warn!("tick {}: {action}: no such captured frame", self.now);
                        return;
                    }
                };
                let session_key = match key {
                    KnowledgeRef::SessionCTgs(c) => self.client(c).and_then(|c| c.tgs_session_key()).cloned(),
                    KnowledgeRef::SessionCV(c) => self.client(c).and_then(|c| c.service_session_key()).cloned(),
                    other => self.attacker.as_ref().and_then(|a| a.static_keys.get(other)).cloned(),
                };
                let Some(session_key) = session_key else {
                    log::warn!("tick {}: {action}: key not available yet", self.now);
                    return;
                };
                let now = Timestamp(self.now);
                let att = self.attacker.as_mut().expect("attacker present");
                let victim_addr = att.victim_addr.clone();
                let authenticator =
                    make_authenticator(&session_key, &reply.client, &victim_addr, now, &mut att.entropy);
                let req = ServiceTicketRequest {
                    ticket: reply.ticket,
                    target_v: PrincipalId::new(target.as_str()).expect("validated"),
                    n2: Nonce(att.entropy.next_u64()),
                    authenticator,
                };
                let msg = match self.variant {
                    Variant::Triple => ProtocolMessage::M3(req),
                    Variant::Baseline => ProtocolMessage::B3(req),
                };
                let tgs = self.tgs().expect("tgs node").id.to_string();
                self.attacker_send(EventKind::Inject, &tgs, &msg);
            }
        }
    }

    fn attacker_receive(&mut self, from: &str, msg: ProtocolMessage) {
        self.attacker
            .as_mut()
            .expect("attacker present")
            .observed
            .push(msg.clone());
        let spec = &self.attacker.as_ref().expect("attacker present").spec;
        let can_inject = spec.can(Capability::Inject);
        let strategy = spec.on_challenge;
        let now = Timestamp(self.now);
        match &msg {
            ProtocolMessage::M4_1(reply) | ProtocolMessage::B4(reply) if can_inject => {
                let known = self.attacker_knowledge();
                let Some(part) = known.iter().find_map(|k| ServiceReplyPart::open(k, &reply.enc).ok()) else {
                    log::debug!("tick {}: attacker cannot open {}", self.now, msg.kind());
                    return;
                };
                let att = self.attacker.as_mut().expect("attacker present");
                let authenticator = make_authenticator(
                    &part.session_key,
                    &reply.client,
                    &att.victim_addr,
                    now,
                    &mut att.entropy,
                );
                let req = ServiceRequest {
                    ticket: reply.ticket.clone(),
                    authenticator,
                };
                let forged = match self.variant {
                    Variant::Triple => ProtocolMessage::M5(req),
                    Variant::Baseline => ProtocolMessage::B5(req),
                };
                self.attacker_send(EventKind::Inject, part.target_v.as_str(), &forged);
            }
            ProtocolMessage::M6(env) if can_inject && strategy != ChallengeStrategy::Silent => {
                let known = self.attacker_knowledge();
                let Some((key, challenge)) = known
                    .iter()
                    .find_map(|k| ChallengeBody::open(k, &env.enc).ok().map(|c| (k.clone(), c)))
                else {
                    return;
                };
                let att = self.attacker.as_ref().expect("attacker present");
                let client = challenge.client.as_str();
                let k3 = match strategy {
                    ChallengeStrategy::WrongPassword => {
                        let guess = att.spec.guess_password.as_deref().unwrap_or("guess");
                        derive_key(guess, client, 3).ok()
                    }
                    ChallengeStrategy::Answer => att
                        .static_keys
                        .get(&KnowledgeRef::PasswordKey {
                            client: client.to_string(),
                            index: 3,
                        })
                        .cloned()
                        .or_else(|| recovered_challenge_answers(&known, &att.observed).into_iter().next()),
                    ChallengeStrategy::Silent => None,
                };
                let Some(k3) = k3 else {
                    return;
                };
                let att = self.attacker.as_mut().expect("attacker present");
                let response = ChallengeResponse { k3, t5: now }.seal(&key, &mut att.entropy);
                self.attacker_send(
                    EventKind::Inject,
                    from,
                    &ProtocolMessage::M7(Envelope { enc: response }),
                );
            }
            _ => {}
        }
    }

    fn verdict(&self, quiescent: bool) -> Verdict {
        let attacker = self.attacker_label();
        let client_outcomes = self
            .nodes
            .values()
            .filter_map(|n| n.principal.as_client().map(|c| (n.label.clone(), c.outcome.clone())))
            .collect();
        Verdict {
            attacker_succeeded: attacker.is_some_and(|a| self.grants.iter().any(|g| g.node == a)),
            service_granted_to: self.grants.clone(),
            alerts: self.alerts.clone(),
            compromise_notices: self.notices.clone(),
            client_outcomes,
            challenges: self.challenges.clone(),
            accounting_errors: self.accounting_errors.clone(),
            quiescent,
            final_tick: self.now,
        }
    }

    /// Per-node state snapshots, concatenated in label order.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (label, node) in &self.nodes {
            let _ = writeln!(out, "[{label}]");
            out.push_str(&node.principal.snapshot());
        }
        out
    }
}

#[cfg(test)]
impl World {
    /// Processes everything scheduled at or before `tick`.
    fn run_until(&mut self, tick: i64) {
        let saved = self.max_ticks;
        self.max_ticks = tick;
        self.run();
        self.max_ticks = saved;
    }
}
