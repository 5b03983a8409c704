//! What the attacker knows, what it may do, and what it can learn.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::crypto::{open, SymmetricKey};
use crate::protocol::{
    ChallengeResponse, MessageKind, PasswordBundle, ProtocolMessage, Sealable, ServerPasswordPart, ServiceReplyPart,
    ServiceTicketBody, TgsTicketBody, TgtReplyPart,
};

/// A key named in a scenario's `knowledge` list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(try_from = "String")]
pub enum KnowledgeRef {
    /// `k1(alice)`, `k2(alice)`, `k3(alice)`
    PasswordKey { client: String, index: u8 },
    /// `longterm(tgs)`, `longterm(v)`
    LongTerm(String),
    /// `session_c_tgs(alice)`: the client's current TGS session key.
    SessionCTgs(String),
    /// `session_c_v(alice)`
    SessionCV(String),
}

impl KnowledgeRef {
    /// The node label the reference points at.
    pub fn subject(&self) -> &str {
        match self {
            KnowledgeRef::PasswordKey { client, .. } => client,
            KnowledgeRef::LongTerm(n) | KnowledgeRef::SessionCTgs(n) | KnowledgeRef::SessionCV(n) => n,
        }
    }
}

impl FromStr for KnowledgeRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (head, rest) = s
            .split_once('(')
            .ok_or_else(|| format!("knowledge {s:?}: expected name(principal)"))?;
        let arg = rest
            .strip_suffix(')')
            .filter(|a| !a.is_empty())
            .ok_or_else(|| format!("knowledge {s:?}: expected name(principal)"))?
            .to_string();
        match head {
            "k1" => Ok(KnowledgeRef::PasswordKey { client: arg, index: 1 }),
            "k2" => Ok(KnowledgeRef::PasswordKey { client: arg, index: 2 }),
            "k3" => Ok(KnowledgeRef::PasswordKey { client: arg, index: 3 }),
            "longterm" => Ok(KnowledgeRef::LongTerm(arg)),
            "session_c_tgs" => Ok(KnowledgeRef::SessionCTgs(arg)),
            "session_c_v" => Ok(KnowledgeRef::SessionCV(arg)),
            other => Err(format!(
                "knowledge {s:?}: unknown key kind {other:?} (k1, k2, k3, longterm, session_c_tgs, session_c_v)"
            )),
        }
    }
}

impl TryFrom<String> for KnowledgeRef {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for KnowledgeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnowledgeRef::PasswordKey { client, index } => write!(f, "k{index}({client})"),
            KnowledgeRef::LongTerm(n) => write!(f, "longterm({n})"),
            KnowledgeRef::SessionCTgs(n) => write!(f, "session_c_tgs({n})"),
            KnowledgeRef::SessionCV(n) => write!(f, "session_c_v({n})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    /// Passive tap on every honest frame.
    Capture,
    /// Re-send captured frames verbatim.
    Replay,
    /// Send with the impersonated client's source address.
    SpoofAddr,
    /// Send freshly built frames.
    Inject,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Capture => "capture",
            Capability::Replay => "replay",
            Capability::SpoofAddr => "spoof_addr",
            Capability::Inject => "inject",
        })
    }
}

/// How the attacker answers an M6 addressed to it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengeStrategy {
    #[default]
    Silent,
    /// Answer with k3 derived from `guess_password`.
    WrongPassword,
    /// Answer with a k3 the attacker actually holds, if any.
    Answer,
}

/// `M5#1`: the first captured M5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRef {
    pub kind: MessageKind,
    pub index: usize,
}

impl FromStr for FrameRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, index) = s
            .split_once('#')
            .ok_or_else(|| format!("frame reference {s:?}: expected Kind#n"))?;
        let kind = MessageKind::from_name(kind)
            .ok_or_else(|| format!("frame reference {s:?}: unknown message kind {kind:?}"))?;
        let index: usize = index
            .parse()
            .ok()
            .filter(|i| *i >= 1)
            .ok_or_else(|| format!("frame reference {s:?}: index must be a positive integer"))?;
        Ok(FrameRef { kind, index })
    }
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.kind, self.index)
    }
}

/// One scripted step. Text forms:
///
/// ```text
/// replay M5#1 to v
/// forge_m3 ticket=M2_1#1 key=session_c_tgs(alice) target=v
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum ScriptedAction {
    Replay {
        frame: FrameRef,
        to: String,
    },
    /// A TGS request built from a captured TGT and a fresh authenticator
    /// sealed under `key`.
    ForgeM3 {
        ticket: FrameRef,
        key: KnowledgeRef,
        target: String,
    },
}

impl ScriptedAction {
    pub fn required_capability(&self) -> Capability {
        match self {
            ScriptedAction::Replay { .. } => Capability::Replay,
            ScriptedAction::ForgeM3 { .. } => Capability::Inject,
        }
    }
}

impl FromStr for ScriptedAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["replay", frame, "to", node] => Ok(ScriptedAction::Replay {
                frame: frame.parse()?,
                to: node.to_string(),
            }),
            ["forge_m3", args @ ..] => {
                let (mut ticket, mut key, mut target) = (None, None, None);
                for arg in args {
                    match arg.split_once('=') {
                        Some(("ticket", v)) => ticket = Some(v.parse::<FrameRef>()?),
                        Some(("key", v)) => key = Some(v.parse::<KnowledgeRef>()?),
                        Some(("target", v)) => target = Some(v.to_string()),
                        _ => return Err(format!("action {s:?}: unexpected argument {arg:?}")),
                    }
                }
                let ticket = ticket.ok_or_else(|| format!("action {s:?}: missing ticket="))?;
                if !matches!(ticket.kind, MessageKind::M2_1 | MessageKind::B2) {
                    return Err(format!("action {s:?}: ticket must come from M2_1 or B2"));
                }
                Ok(ScriptedAction::ForgeM3 {
                    ticket,
                    key: key.ok_or_else(|| format!("action {s:?}: missing key="))?,
                    target: target.ok_or_else(|| format!("action {s:?}: missing target="))?,
                })
            }
            _ => Err(format!(
                "action {s:?}: expected `replay <Kind#n> to <node>` or `forge_m3 ticket=.. key=.. target=..`"
            )),
        }
    }
}

impl TryFrom<String> for ScriptedAction {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for ScriptedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptedAction::Replay { frame, to } => write!(f, "replay {frame} to {to}"),
            ScriptedAction::ForgeM3 { ticket, key, target } => {
                write!(f, "forge_m3 ticket={ticket} key={key} target={target}")
            }
        }
    }
}

/// Keys carried inside a decrypted body, whatever its label.
pub fn keys_in_plaintext(plain: &[u8]) -> Vec<SymmetricKey> {
    let Some(&label) = plain.first() else {
        return Vec::new();
    };
    let keys = match label {
        TgsTicketBody::LABEL => TgsTicketBody::from_plaintext(plain).map(|b| vec![b.session_key]),
        ServiceTicketBody::LABEL => ServiceTicketBody::from_plaintext(plain).map(|b| vec![b.session_key]),
        TgtReplyPart::LABEL => TgtReplyPart::from_plaintext(plain).map(|b| vec![b.session_key]),
        PasswordBundle::LABEL => PasswordBundle::from_plaintext(plain).map(|b| vec![b.k2, b.k3]),
        ServiceReplyPart::LABEL => ServiceReplyPart::from_plaintext(plain).map(|b| vec![b.session_key]),
        ServerPasswordPart::LABEL => ServerPasswordPart::from_plaintext(plain).map(|b| vec![b.k3]),
        ChallengeResponse::LABEL => ChallengeResponse::from_plaintext(plain).map(|b| vec![b.k3]),
        _ => Ok(Vec::new()),
    };
    keys.unwrap_or_default()
}

/// Everything the attacker can learn: open every sealed field of every frame
/// with every known key, add what falls out, repeat until nothing new.
pub fn attacker_closure(knowledge: &BTreeSet<SymmetricKey>, frames: &[ProtocolMessage]) -> BTreeSet<SymmetricKey> {
    let mut known = knowledge.clone();
    let boxes: Vec<_> = frames.iter().flat_map(|f| f.sealed_fields()).collect();
    let mut opened = vec![false; boxes.len()];
    loop {
        let mut grew = false;
        for (i, sealed) in boxes.iter().enumerate() {
            if opened[i] {
                continue;
            }
            let Some(plain) = known.iter().find_map(|k| open(k, sealed).ok()) else {
                continue;
            };
            opened[i] = true;
            for key in keys_in_plaintext(&plain) {
                grew |= known.insert(key);
            }
        }
        if !grew {
            return known;
        }
    }
}

/// k3 values readable from captured M7s under the given keys.
pub fn recovered_challenge_answers(known: &BTreeSet<SymmetricKey>, frames: &[ProtocolMessage]) -> Vec<SymmetricKey> {
    let mut out = Vec::new();
    for frame in frames {
        if let ProtocolMessage::M7(env) = frame {
            if let Some(resp) = known.iter().find_map(|k| ChallengeResponse::open(k, &env.enc).ok()) {
                out.push(resp.k3);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knowledge_refs_parse_and_print() {
        for s in [
            "k1(alice)",
            "k2(bob)",
            "k3(c)",
            "longterm(tgs)",
            "session_c_tgs(alice)",
            "session_c_v(alice)",
        ] {
            let r: KnowledgeRef = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("k4(alice)".parse::<KnowledgeRef>().is_err());
        assert!("k1()".parse::<KnowledgeRef>().is_err());
        assert!("k1 alice".parse::<KnowledgeRef>().is_err());
    }

    #[test]
    fn actions_parse() {
        let a: ScriptedAction = "replay M5#1 to v".parse().unwrap();
        assert_eq!(
            a,
            ScriptedAction::Replay {
                frame: FrameRef {
                    kind: MessageKind::M5,
                    index: 1
                },
                to: "v".into()
            }
        );
        let f: ScriptedAction = "forge_m3 ticket=B2#1 key=session_c_tgs(alice) target=v"
            .parse()
            .unwrap();
        assert_eq!(f.to_string(), "forge_m3 ticket=B2#1 key=session_c_tgs(alice) target=v");
        assert_eq!(f.required_capability(), Capability::Inject);
        assert!("replay M5#0 to v".parse::<ScriptedAction>().is_err());
        assert!("replay M99#1 to v".parse::<ScriptedAction>().is_err());
        assert!("forge_m3 ticket=M5#1 key=k1(a) target=v"
            .parse::<ScriptedAction>()
            .is_err());
        assert!("dance".parse::<ScriptedAction>().is_err());
    }

    #[test]
    fn empty_knowledge_learns_nothing() {
        assert!(attacker_closure(&BTreeSet::new(), &[]).is_empty());
    }
}
