use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{connect, peer_for, wall_now};
use crate::crypto::{Entropy, SymmetricKey};
use crate::principals::{ClientConfig, ClientOutcome, ClientState, Dest, PrincipalEvent, Reaction, Timing, Variant};
use crate::protocol::{encode, FrameDecoder, MessageKind, NetworkAddress, PrincipalId, ProtocolMessage};

#[derive(Debug, Clone)]
pub struct ClientAuthConfig {
    pub client: PrincipalId,
    pub keys: [SymmetricKey; 3],
    pub tgs_id: PrincipalId,
    pub server: PrincipalId,
    /// `as`, plus the TGS and server by principal or role name.
    pub peers: BTreeMap<String, String>,
    pub variant: Variant,
    pub timing: Timing,
    /// How long to wait for each reply.
    pub io_timeout: Duration,
    /// Stop right after sending this message, without waiting for a reply.
    pub stop_after: Option<MessageKind>,
}

#[derive(Debug, Error)]
pub enum ClientAuthError {
    #[error("network: {0}")]
    Network(String),
    #[error("no peer address for {0}")]
    MissingPeer(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl ClientAuthError {
    /// 1 for network trouble, 3 for protocol failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientAuthError::Network(_) | ClientAuthError::MissingPeer(_) => 1,
            ClientAuthError::Protocol(_) => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Step {
    pub n: usize,
    pub outgoing: bool,
    pub peer: String,
    pub wall: i64,
    pub msg: ProtocolMessage,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} t={} {} {:<21} {}",
            self.n,
            self.wall,
            if self.outgoing { "->" } else { "<-" },
            self.peer,
            self.msg.describe()
        )
    }
}

#[derive(Debug, Clone)]
pub struct ClientAuthReport {
    pub steps: Vec<Step>,
    /// `None` when the run stopped early on request.
    pub outcome: Option<ClientOutcome>,
}

struct Conn {
    stream: TcpStream,
    decoder: FrameDecoder,
}

impl Conn {
    fn recv(&mut self, timeout: Duration) -> Result<ProtocolMessage, String> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 4096];
        loop {
            match self.decoder.next_frame() {
                Ok(Some(msg)) => return Ok(msg),
                Ok(None) => {}
                Err(e) => return Err(format!("malformed reply: {e}")),
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err("timed out waiting for a reply".into());
            }
            self.stream.set_read_timeout(Some(left)).map_err(|e| e.to_string())?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err("connection closed before a reply".into()),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) => return Err(e.to_string()),
            }
        }
    }
}

/// Runs one authentication against live daemons, printing a line per message
/// the client sends or receives.
pub fn client_auth(cfg: &ClientAuthConfig, out: &mut dyn Write) -> Result<ClientAuthReport, ClientAuthError> {
    let mut conns: BTreeMap<String, Conn> = BTreeMap::new();
    let mut steps = Vec::new();

    let as_addr = peer_for(&cfg.peers, &Dest::As).ok_or_else(|| ClientAuthError::MissingPeer("as".into()))?;
    let first = connect(as_addr).map_err(|e| ClientAuthError::Network(format!("{as_addr}: {e}")))?;
    // AD_c is whatever address the AS sees us connect from
    let local = first
        .local_addr()
        .map_err(|e| ClientAuthError::Network(e.to_string()))?
        .ip()
        .to_string();
    conns.insert(
        as_addr.clone(),
        Conn {
            stream: first,
            decoder: FrameDecoder::new(),
        },
    );

    let mut state = ClientState::new(
        ClientConfig {
            id: cfg.client.clone(),
            addr: NetworkAddress::new(local).map_err(|e| ClientAuthError::Network(e.to_string()))?,
            tgs: cfg.tgs_id.clone(),
            server: cfg.server.clone(),
            keys: cfg.keys.clone(),
            variant: cfg.variant,
            timing: cfg.timing,
        },
        Entropy::system(),
    );

    let mut reaction = state.start(wall_now());
    loop {
        if let Some(outcome) = done(&reaction) {
            return match outcome {
                ClientOutcome::Authenticated { .. } => Ok(ClientAuthReport {
                    steps,
                    outcome: Some(outcome),
                }),
                ClientOutcome::Failed(f) => Err(ClientAuthError::Protocol(f.to_string())),
            };
        }
        let Some(next) = reaction.outbound.into_iter().next() else {
            return Err(ClientAuthError::Protocol(format!("stuck in phase {}", state.phase)));
        };
        let addr = peer_for(&cfg.peers, &next.dest)
            .ok_or_else(|| ClientAuthError::MissingPeer(format!("{:?}", next.dest)))?
            .clone();
        if !conns.contains_key(&addr) {
            let stream = connect(&addr).map_err(|e| ClientAuthError::Network(format!("{addr}: {e}")))?;
            conns.insert(
                addr.clone(),
                Conn {
                    stream,
                    decoder: FrameDecoder::new(),
                },
            );
        }
        let conn = conns.get_mut(&addr).expect("just inserted");
        conn.stream
            .write_all(&encode(&next.msg))
            .map_err(|e| ClientAuthError::Network(format!("{addr}: {e}")))?;
        let kind = next.msg.kind();
        record(&mut steps, out, true, &addr, next.msg);
        if cfg.stop_after == Some(kind) {
            return Ok(ClientAuthReport { steps, outcome: None });
        }

        let reply = conn
            .recv(cfg.io_timeout)
            .map_err(|e| ClientAuthError::Protocol(format!("after {kind}: {e}")))?;
        let now = wall_now();
        record(&mut steps, out, false, &addr, reply.clone());
        reaction = state
            .handle(&reply, now)
            .map_err(|e| ClientAuthError::Protocol(e.to_string()))?;
    }
}

fn done(reaction: &Reaction) -> Option<ClientOutcome> {
    reaction.events.iter().find_map(|e| match e {
        PrincipalEvent::ClientDone(o) => Some(o.clone()),
        _ => None,
    })
}

fn record(steps: &mut Vec<Step>, out: &mut dyn Write, outgoing: bool, peer: &str, msg: ProtocolMessage) {
    let step = Step {
        n: steps.len() + 1,
        outgoing,
        peer: peer.to_string(),
        wall: wall_now().0,
        msg,
    };
    let _ = writeln!(out, "{step}");
    steps.push(step);
}
