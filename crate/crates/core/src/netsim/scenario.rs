//! Scenario files: TOML with `[variant]`, `[principals]`, `[adversary]`,
//! `[timing]`, `[limits]` and `[expect]` sections.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::adversary::{Capability, ChallengeStrategy, KnowledgeRef, ScriptedAction};
use super::Verdict;
use crate::crypto::{derive_key, derive_long_term_key, KeyOrigin, Keytab, SymmetricKey};
use crate::principals::{Timing, Variant};
use crate::protocol::{NetworkAddress, PrincipalId};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("bad adversary script: {0}")]
    Script(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    pub variant: VariantSection,
    pub principals: PrincipalsSpec,
    #[serde(default)]
    pub adversary: Option<AdversarySpec>,
    #[serde(default)]
    pub timing: TimingSpec,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub expect: Expectation,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSection {
    pub kind: Variant,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalsSpec {
    #[serde(rename = "as")]
    pub kdc: NodeSpec,
    pub tgs: KeyedNodeSpec,
    pub servers: Vec<KeyedNodeSpec>,
    pub clients: Vec<ClientSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub addr: String,
}

/// A node with a long-term key, given either as a passphrase or as hex.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyedNodeSpec {
    pub id: String,
    pub addr: String,
    #[serde(default)]
    pub passphrase: Option<String>,
    #[serde(default)]
    pub key: Option<String>,
}

impl KeyedNodeSpec {
    pub fn long_term_key(&self) -> Result<SymmetricKey, ScenarioError> {
        let bad = |why: String| ScenarioError::Invalid(format!("{}: {why}", self.id));
        match (&self.passphrase, &self.key) {
            (Some(p), None) => derive_long_term_key(p, &self.id).map_err(|e| bad(e.to_string())),
            (None, Some(h)) => {
                let bytes = hex::decode(h).map_err(|e| bad(format!("key: {e}")))?;
                SymmetricKey::from_slice(&bytes, KeyOrigin::LongTerm).map_err(|e| bad(e.to_string()))
            }
            _ => Err(bad("exactly one of passphrase or key is required".into())),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub id: String,
    pub addr: String,
    pub passwords: [String; 3],
    pub target: String,
    #[serde(default)]
    pub start_at: i64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default = "default_attacker_node")]
    pub node: String,
    pub addr: String,
    /// Client whose address a spoofing attacker borrows. Defaults to the first client.
    #[serde(default)]
    pub impersonate: Option<String>,
    #[serde(default)]
    pub knowledge: Vec<KnowledgeRef>,
    #[serde(default)]
    pub capabilities: BTreeSet<Capability>,
    #[serde(default)]
    pub on_challenge: ChallengeStrategy,
    #[serde(default)]
    pub guess_password: Option<String>,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
}

fn default_attacker_node() -> String {
    "mallory".into()
}

impl AdversarySpec {
    pub fn can(&self, cap: Capability) -> bool {
        self.capabilities.contains(&cap)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub at: i64,
    #[serde(rename = "do")]
    pub action: ScriptedAction,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSpec {
    pub timer_duration: i64,
    pub freshness_window: u64,
    pub tgt_lifetime: i64,
    pub service_lifetime: i64,
    /// Ticks per hop unless `links` overrides it.
    pub latency: i64,
    /// `"alice->v" = 3`
    pub links: BTreeMap<String, i64>,
}

impl Default for TimingSpec {
    fn default() -> Self {
        let t = Timing::default();
        Self {
            timer_duration: t.timer_duration,
            freshness_window: t.freshness_window,
            tgt_lifetime: t.tgt_lifetime,
            service_lifetime: t.service_lifetime,
            latency: 1,
            links: BTreeMap::new(),
        }
    }
}

impl TimingSpec {
    pub fn principal_timing(&self) -> Timing {
        Timing {
            freshness_window: self.freshness_window,
            tgt_lifetime: self.tgt_lifetime,
            service_lifetime: self.service_lifetime,
            timer_duration: self.timer_duration,
        }
    }

    pub fn latency(&self, src: &str, dst: &str) -> i64 {
        self.links
            .get(&format!("{src}->{dst}"))
            .copied()
            .unwrap_or(self.latency)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    pub max_ticks: i64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_ticks: 1000 }
    }
}

/// Optional `[expect]` block checked by `sim-run`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub attacker_succeeded: Option<bool>,
    pub alerts_count: Option<usize>,
    /// Node labels, in grant order.
    pub granted_to: Option<Vec<String>>,
}

impl Expectation {
    pub fn is_empty(&self) -> bool {
        *self == Expectation::default()
    }

    /// One line per field that does not match.
    pub fn mismatches(&self, verdict: &Verdict) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(want) = self.attacker_succeeded {
            if verdict.attacker_succeeded != want {
                out.push(format!(
                    "attacker_succeeded: expected {want}, got {}",
                    verdict.attacker_succeeded
                ));
            }
        }
        if let Some(want) = self.alerts_count {
            if verdict.alerts.len() != want {
                out.push(format!("alerts_count: expected {want}, got {}", verdict.alerts.len()));
            }
        }
        if let Some(want) = &self.granted_to {
            let got = verdict.granted_nodes();
            if &got != want {
                out.push(format!("granted_to: expected {want:?}, got {got:?}"));
            }
        }
        out
    }
}

impl ScenarioSpec {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec = Self::parse(&text).map_err(|e| match e {
            ScenarioError::Parse(msg) => ScenarioError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if spec.name.is_empty() {
            spec.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(spec)
    }

    pub fn variant(&self) -> Variant {
        self.variant.kind
    }

    pub fn attacker_node(&self) -> Option<&str> {
        self.adversary.as_ref().map(|a| a.node.as_str())
    }

    /// Every node label with its role name, attacker included.
    pub fn node_labels(&self) -> Vec<(&str, &'static str)> {
        let p = &self.principals;
        let mut out = vec![(p.kdc.id.as_str(), "as"), (p.tgs.id.as_str(), "tgs")];
        out.extend(p.servers.iter().map(|s| (s.id.as_str(), "v")));
        out.extend(p.clients.iter().map(|c| (c.id.as_str(), "client")));
        if let Some(a) = &self.adversary {
            out.push((a.node.as_str(), "adversary"));
        }
        out
    }

    fn role_of(&self, label: &str) -> Option<&'static str> {
        self.node_labels()
            .into_iter()
            .find(|(l, _)| *l == label)
            .map(|(_, r)| r)
    }

    /// One keytab per node: the AS gets every client's password keys and the
    /// TGS key, the TGS gets its own key and every server's, each server its
    /// own, each client its three password keys.
    pub fn keytabs(&self) -> Result<BTreeMap<String, Keytab>, ScenarioError> {
        let p = &self.principals;
        let k_tgs = p.tgs.long_term_key()?;
        let mut kdc = Keytab::new();
        let mut tgs = Keytab::new();
        let mut out = BTreeMap::new();
        kdc.insert(p.tgs.id.as_str(), 0, k_tgs.clone());
        tgs.insert(p.tgs.id.as_str(), 0, k_tgs);
        for s in &p.servers {
            let k = s.long_term_key()?;
            tgs.insert(s.id.as_str(), 0, k.clone());
            let mut own = Keytab::new();
            own.insert(s.id.as_str(), 0, k);
            out.insert(s.id.clone(), own);
        }
        for c in &p.clients {
            let mut own = Keytab::new();
            for (i, pw) in c.passwords.iter().enumerate() {
                let index = i as u8 + 1;
                let k = derive_key(pw, &c.id, index).map_err(|e| ScenarioError::Invalid(format!("{}: {e}", c.id)))?;
                kdc.insert(c.id.as_str(), index, k.clone());
                own.insert(c.id.as_str(), index, k);
            }
            out.insert(c.id.clone(), own);
        }
        out.insert(p.kdc.id.clone(), kdc);
        out.insert(p.tgs.id.clone(), tgs);
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let mut seen = BTreeSet::new();
        for (label, _) in self.node_labels() {
            PrincipalId::new(label).map_err(|e| ScenarioError::Invalid(format!("node {label:?}: {e}")))?;
            if !seen.insert(label) {
                return invalid(format!("duplicate node {label:?}"));
            }
        }
        let p = &self.principals;
        let addrs = std::iter::once(&p.kdc.addr)
            .chain(std::iter::once(&p.tgs.addr))
            .chain(p.servers.iter().map(|s| &s.addr))
            .chain(p.clients.iter().map(|c| &c.addr))
            .chain(self.adversary.iter().map(|a| &a.addr));
        for addr in addrs {
            NetworkAddress::new(addr.as_str()).map_err(|e| ScenarioError::Invalid(format!("address {addr:?}: {e}")))?;
        }
        p.tgs.long_term_key()?;
        for s in &p.servers {
            s.long_term_key()?;
        }
        if p.clients.is_empty() {
            return invalid("at least one client is required".into());
        }
        for c in &p.clients {
            if c.passwords.iter().any(|pw| pw.is_empty()) {
                return invalid(format!("client {}: passwords must be non-empty", c.id));
            }
            if self.role_of(&c.target) != Some("v") {
                return Err(ScenarioError::UnknownNode(c.target.clone()));
            }
            if c.start_at < 0 {
                return invalid(format!("client {}: start_at must be >= 0", c.id));
            }
        }

        let t = &self.timing;
        if t.timer_duration < 0 || t.latency < 0 || t.tgt_lifetime < 0 || t.service_lifetime < 0 {
            return invalid("timing values must be non-negative".into());
        }
        for (link, latency) in &t.links {
            let Some((a, b)) = link.split_once("->") else {
                return invalid(format!("link {link:?}: expected \"src->dst\""));
            };
            for end in [a, b] {
                if self.role_of(end).is_none() {
                    return Err(ScenarioError::UnknownNode(end.to_string()));
                }
            }
            if *latency < 0 {
                return invalid(format!("link {link:?}: latency must be >= 0"));
            }
        }
        if self.limits.max_ticks <= 0 {
            return invalid("limits.max_ticks must be positive".into());
        }

        if let Some(adv) = &self.adversary {
            let script = |m: String| Err(ScenarioError::Script(m));
            if let Some(victim) = &adv.impersonate {
                if self.role_of(victim) != Some("client") {
                    return Err(ScenarioError::UnknownNode(victim.clone()));
                }
            }
            for k in &adv.knowledge {
                let want = match k {
                    KnowledgeRef::LongTerm(_) => &["tgs", "v"][..],
                    _ => &["client"][..],
                };
                match self.role_of(k.subject()) {
                    Some(role) if want.contains(&role) => {}
                    Some(_) => return script(format!("knowledge {k}: wrong kind of principal")),
                    None => return Err(ScenarioError::UnknownNode(k.subject().to_string())),
                }
            }
            for a in &adv.actions {
                if a.at < 0 {
                    return script(format!("action at {}: tick must be >= 0", a.at));
                }
                let cap = a.action.required_capability();
                if !adv.can(cap) {
                    return script(format!("{}: needs capability {cap}", a.action));
                }
                match &a.action {
                    ScriptedAction::Replay { frame, to } => {
                        if !adv.can(Capability::Capture) {
                            return script(format!("{}: replay needs capture", a.action));
                        }
                        if self.role_of(to).is_none() {
                            return Err(ScenarioError::UnknownNode(to.clone()));
                        }
                        if frame.kind.is_baseline() != (self.variant() == Variant::Baseline) {
                            return script(format!("{}: frame kind not in this variant", a.action));
                        }
                    }
                    ScriptedAction::ForgeM3 { ticket, key, target } => {
                        if !adv.can(Capability::Capture) {
                            return script(format!("{}: forging from a ticket needs capture", a.action));
                        }
                        if ticket.kind.is_baseline() != (self.variant() == Variant::Baseline) {
                            return script(format!("{}: ticket kind not in this variant", a.action));
                        }
                        if !adv.knowledge.contains(key) {
                            return script(format!("{}: key {key} is not in knowledge", a.action));
                        }
                        if self.role_of(target) != Some("v") {
                            return Err(ScenarioError::UnknownNode(target.clone()));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// The bundled scenarios, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("honest-baseline", include_str!("../../scenarios/honest-baseline.scn")),
    ("honest-triple", include_str!("../../scenarios/honest-triple.scn")),
    ("attack1-baseline", include_str!("../../scenarios/attack1-baseline.scn")),
    ("attack1-triple", include_str!("../../scenarios/attack1-triple.scn")),
    ("attack2-baseline", include_str!("../../scenarios/attack2-baseline.scn")),
    (
        "attack2-triple-silent",
        include_str!("../../scenarios/attack2-triple-silent.scn"),
    ),
    (
        "attack2-triple-wrongpw",
        include_str!("../../scenarios/attack2-triple-wrongpw.scn"),
    ),
];

pub fn bundled(name: &str) -> Option<ScenarioSpec> {
    let (_, text) = BUNDLED.iter().find(|(n, _)| *n == name)?;
    let mut spec = ScenarioSpec::parse(text).expect("bundled scenarios are valid");
    if spec.name.is_empty() {
        spec.name = name.to_string();
    }
    Some(spec)
}
