//! The principals as TCP daemons speaking the `KTP1` wire format.
//!
//! Each daemon owns one [`Principal`] behind a mutex: connection threads and
//! V's deadline sweep take turns on it. Replies go back on the connection the
//! request came in on; forwards (M2_2, M4_2, M9, M10) use one persistent
//! outgoing connection per peer. Forwards are written before replies so the
//! next hop already holds the passwords when the client's next request lands.

mod client;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub use client::{client_auth, ClientAuthConfig, ClientAuthError, ClientAuthReport, Step};

use crate::crypto::{Entropy, Keytab, KeytabError};
use crate::netsim::EventKind;
use crate::principals::{
    AsState, CompromiseNotice, CredentialRecord, Dest, Principal, PrincipalEvent, Reaction, ServerState, TgsState,
    Timing, Variant,
};
use crate::protocol::{
    decode, encode, CodecError, FrameDecoder, NetworkAddress, PrincipalId, ProtocolMessage, Timestamp,
};

const POLL: Duration = Duration::from_millis(20);
const READ_TICK: Duration = Duration::from_millis(200);
const SWEEP_EVERY: Duration = Duration::from_millis(100);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

/// Seconds since the Unix epoch.
pub fn wall_now() -> Timestamp {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0);
    Timestamp(secs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaemonRole {
    As,
    Tgs,
    V,
}

impl fmt::Display for DaemonRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DaemonRole::As => "as",
            DaemonRole::Tgs => "tgs",
            DaemonRole::V => "v",
        })
    }
}

impl std::str::FromStr for DaemonRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as" => Ok(DaemonRole::As),
            "tgs" => Ok(DaemonRole::Tgs),
            "v" => Ok(DaemonRole::V),
            other => Err(format!("unknown role {other:?} (expected as, tgs or v)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Keytab(#[from] KeytabError),
    #[error("keytab has no long-term key for {0}")]
    MissingKey(String),
    #[error("no peer address for {0}")]
    MissingPeer(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub role: DaemonRole,
    /// This daemon's principal name. Defaults to the role name.
    pub id: PrincipalId,
    /// The TGS principal name, used by V to address M9.
    pub tgs_id: PrincipalId,
    pub listen_addr: String,
    pub keytab_path: PathBuf,
    /// Keyed by principal name (`tgs`, `v`, ...) or role name (`as`, `tgs`, `v`).
    pub peer_addrs: BTreeMap<String, String>,
    pub variant: Variant,
    pub timing: Timing,
}

impl DaemonConfig {
    pub fn new(
        role: DaemonRole,
        listen_addr: impl Into<String>,
        keytab_path: impl Into<PathBuf>,
        variant: Variant,
    ) -> Self {
        Self {
            role,
            id: PrincipalId::new(role.to_string()).expect("role names are valid ids"),
            tgs_id: PrincipalId::new("tgs").expect("valid"),
            listen_addr: listen_addr.into(),
            keytab_path: keytab_path.into(),
            peer_addrs: BTreeMap::new(),
            variant,
            timing: Timing::default(),
        }
    }

    pub fn peer(mut self, name: impl Into<String>, addr: impl Into<String>) -> Self {
        self.peer_addrs.insert(name.into(), addr.into());
        self
    }

    /// Peers the triple variant forwards to. The baseline needs none.
    fn required_peers(&self) -> Vec<&'static str> {
        match (self.variant, self.role) {
            (Variant::Baseline, _) => vec![],
            (Variant::Triple, DaemonRole::As) => vec!["tgs"],
            (Variant::Triple, DaemonRole::Tgs) => vec!["as", "v"],
            (Variant::Triple, DaemonRole::V) => vec!["tgs"],
        }
    }

    fn check_peers(&self, keytab: &Keytab) -> Result<(), TransportError> {
        for role in self.required_peers() {
            let found = self.peer_addrs.contains_key(role)
                || match role {
                    "tgs" => self.peer_addrs.contains_key(self.tgs_id.as_str()),
                    "v" => keytab.entries().any(|e| {
                        e.index == 0 && e.principal != self.id.as_str() && self.peer_addrs.contains_key(&e.principal)
                    }),
                    _ => false,
                };
            if !found {
                return Err(TransportError::MissingPeer(role.to_string()));
            }
        }
        Ok(())
    }

    fn build_principal(&self, keytab: &Keytab) -> Result<Principal, TransportError> {
        let own = || {
            keytab
                .long_term(self.id.as_str())
                .cloned()
                .ok_or_else(|| TransportError::MissingKey(self.id.to_string()))
        };
        let others = keytab
            .entries()
            .filter(|e| e.index == 0 && e.principal != self.id.as_str())
            .filter_map(|e| PrincipalId::new(e.principal).ok().map(|p| (p, e.key)));
        Ok(match self.role {
            DaemonRole::As => {
                let mut kdc = AsState::new(self.variant, self.timing, Entropy::system());
                for (tgs, key) in others {
                    kdc.add_tgs(tgs, key);
                }
                for name in keytab.clients() {
                    let [k1, k2, k3] = keytab.client_keys(&name).expect("listed as client");
                    let client =
                        PrincipalId::new(name.as_str()).map_err(|_| TransportError::MissingKey(name.clone()))?;
                    // a keytab cannot hold duplicates
                    let _ = kdc.register_record(CredentialRecord { client, k1, k2, k3 });
                }
                Principal::As(kdc)
            }
            DaemonRole::Tgs => {
                let mut tgs = TgsState::new(self.id.clone(), own()?, self.variant, self.timing, Entropy::system());
                for (server, key) in others {
                    tgs.add_server(server, key);
                }
                Principal::Tgs(tgs)
            }
            DaemonRole::V => Principal::Server(ServerState::new(
                self.id.clone(),
                own()?,
                self.tgs_id.clone(),
                self.variant,
                self.timing,
                Entropy::system(),
            )),
        })
    }
}

/// Peer lookup by principal name first, then by role name.
pub(crate) fn peer_for<'a>(peers: &'a BTreeMap<String, String>, dest: &Dest) -> Option<&'a String> {
    match dest {
        Dest::Reply => None,
        Dest::As => peers.get("as"),
        Dest::Tgs(id) => peers.get(id.as_str()).or_else(|| peers.get("tgs")),
        Dest::Server(id) => peers.get(id.as_str()).or_else(|| peers.get("v")),
    }
}

/// A line of daemon activity, mirroring the simulator's event fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaemonEvent {
    pub at: i64,
    pub kind: EventKind,
    pub peer: String,
    pub msg: String,
    pub meta: String,
}

/// One persistent outgoing connection per peer address.
#[derive(Default)]
struct PeerLinks {
    conns: Mutex<BTreeMap<String, TcpStream>>,
}

impl PeerLinks {
    fn send(&self, addr: &str, bytes: &[u8]) -> io::Result<()> {
        let mut conns = lock(&self.conns);
        if let Some(stream) = conns.get_mut(addr) {
            if stream.write_all(bytes).is_ok() {
                return Ok(());
            }
            conns.remove(addr);
        }
        let mut stream = connect(addr)?;
        stream.write_all(bytes)?;
        conns.insert(addr.to_string(), stream);
        Ok(())
    }
}

pub(crate) fn connect(addr: &str) -> io::Result<TcpStream> {
    let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{addr} resolves to nothing"));
    for sa in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&sa, CONNECT_TIMEOUT) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

struct Shared {
    config: DaemonConfig,
    principal: Mutex<Principal>,
    peers: PeerLinks,
    events: Mutex<Vec<DaemonEvent>>,
    notices: Mutex<Vec<CompromiseNotice>>,
    sent: Mutex<Vec<ProtocolMessage>>,
    stop: AtomicBool,
}

impl Shared {
    fn log(&self, kind: EventKind, peer: &str, msg: String, meta: String) {
        let at = wall_now().0;
        log::info!(
            "{} t={at} kind={kind} peer={peer} msg={msg:?} meta={meta:?}",
            self.config.id
        );
        lock(&self.events).push(DaemonEvent {
            at,
            kind,
            peer: peer.to_string(),
            msg,
            meta,
        });
    }

    /// Logs the reaction's events, then sends forwards, then replies.
    fn dispatch(&self, reaction: Reaction, reply: Option<&mut TcpStream>) {
        for ev in reaction.events {
            match ev {
                PrincipalEvent::Granted { client, server } => self.log(
                    EventKind::Grant,
                    "",
                    String::new(),
                    format!("client={client} server={server}"),
                ),
                PrincipalEvent::Alert(r) => self.log(
                    EventKind::Alert,
                    "",
                    String::new(),
                    format!(
                        "incident={} client={} suspect_addr={}",
                        r.incident, r.client, r.suspect_addr
                    ),
                ),
                PrincipalEvent::TimerFired { client, deadline } => self.log(
                    EventKind::TimerFire,
                    "",
                    String::new(),
                    format!("client={client} deadline={deadline}"),
                ),
                PrincipalEvent::Notice(n) => {
                    log::warn!("{}: compromise notice: {n}", self.config.id);
                    self.log(EventKind::Notice, "", String::new(), n.to_string());
                    lock(&self.notices).push(n);
                }
                PrincipalEvent::ChallengeIssued { .. } | PrincipalEvent::ClientDone(_) => {}
            }
        }
        let (replies, forwards): (Vec<_>, Vec<_>) = reaction.outbound.into_iter().partition(|o| o.dest == Dest::Reply);
        for out in forwards {
            let Some(addr) = peer_for(&self.config.peer_addrs, &out.dest) else {
                self.log(
                    EventKind::Drop,
                    "",
                    out.msg.describe(),
                    format!("no peer for {:?}", out.dest),
                );
                continue;
            };
            match self.peers.send(addr, &encode(&out.msg)) {
                Ok(()) => {
                    self.log(EventKind::Send, addr, out.msg.describe(), String::new());
                    lock(&self.sent).push(out.msg);
                }
                Err(e) => self.log(
                    EventKind::Drop,
                    addr,
                    out.msg.describe(),
                    format!("forward failed: {e}"),
                ),
            }
        }
        if let Some(stream) = reply {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            for out in replies {
                match stream.write_all(&encode(&out.msg)) {
                    Ok(()) => {
                        self.log(EventKind::Send, &peer, out.msg.describe(), String::new());
                        lock(&self.sent).push(out.msg);
                    }
                    Err(e) => self.log(EventKind::Drop, &peer, out.msg.describe(), format!("reply failed: {e}")),
                }
            }
        }
    }

    fn handle_frame(&self, bytes: &[u8], src_addr: &NetworkAddress, stream: &mut TcpStream) -> Result<(), CodecError> {
        let msg = decode(bytes)?;
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        let outcome = lock(&self.principal).handle(&msg, src_addr, wall_now());
        match outcome {
            Ok(reaction) => {
                self.log(EventKind::Deliver, &peer, msg.describe(), String::new());
                self.dispatch(reaction, Some(stream));
            }
            Err(reason) => self.log(EventKind::Drop, &peer, msg.describe(), reason.to_string()),
        }
        Ok(())
    }

    fn serve_connection(&self, mut stream: TcpStream) {
        let src_addr = match stream.peer_addr().map(|a| NetworkAddress::new(a.ip().to_string())) {
            Ok(Ok(a)) => a,
            _ => return,
        };
        if stream.set_read_timeout(Some(READ_TICK)).is_err() {
            return;
        }
        let mut decoder = FrameDecoder::new();
        let mut buf = [0u8; 4096];
        while !self.stop.load(Ordering::Relaxed) {
            match stream.read(&mut buf) {
                Ok(0) => return,
                Ok(n) => decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                Err(_) => return,
            }
            loop {
                let frame = decoder.next_frame_bytes().and_then(|f| match f {
                    Some(bytes) => self.handle_frame(&bytes, &src_addr, &mut stream).map(|_| true),
                    None => Ok(false),
                });
                match frame {
                    Ok(true) => continue,
                    Ok(false) => break,
                    Err(e) => {
                        self.log(
                            EventKind::Drop,
                            src_addr.as_str(),
                            String::new(),
                            format!("malformed frame, closing: {e}"),
                        );
                        return;
                    }
                }
            }
        }
    }

    fn sweep_loop(&self) {
        while !self.stop.load(Ordering::Relaxed) {
            thread::sleep(SWEEP_EVERY);
            let reaction = lock(&self.principal).tick(wall_now());
            if reaction != Reaction::default() {
                self.dispatch(reaction, None);
            }
        }
    }
}

/// A running daemon. Dropping it stops the daemon.
pub struct DaemonHandle {
    local_addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl DaemonHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn events(&self) -> Vec<DaemonEvent> {
        lock(&self.shared.events).clone()
    }

    pub fn notices(&self) -> Vec<CompromiseNotice> {
        lock(&self.shared.notices).clone()
    }

    /// Every message this daemon put on the wire, in order.
    pub fn sent(&self) -> Vec<ProtocolMessage> {
        lock(&self.shared.sent).clone()
    }

    pub fn snapshot(&self) -> String {
        lock(&self.shared.principal).snapshot()
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    /// Blocks until the daemon stops.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Binds `config.listen_addr` and starts the daemon on background threads.
pub fn spawn(config: DaemonConfig) -> Result<DaemonHandle, TransportError> {
    let listener = TcpListener::bind(&config.listen_addr).map_err(|source| TransportError::Bind {
        addr: config.listen_addr.clone(),
        source,
    })?;
    spawn_on(config, listener)
}

/// Starts the daemon on an already bound listener; `config.listen_addr` is
/// ignored. Lets a caller learn every port before wiring peers together.
pub fn spawn_on(config: DaemonConfig, listener: TcpListener) -> Result<DaemonHandle, TransportError> {
    let keytab = Keytab::load(&config.keytab_path)?;
    config.check_peers(&keytab)?;
    let principal = config.build_principal(&keytab)?;
    listener.set_nonblocking(true)?;
    let local_addr = listener.local_addr()?;
    log::info!(
        "{} ({}) listening on {local_addr}, variant {}",
        config.id,
        config.role,
        config.variant
    );

    let role = config.role;
    let shared = Arc::new(Shared {
        config,
        principal: Mutex::new(principal),
        peers: PeerLinks::default(),
        events: Mutex::new(Vec::new()),
        notices: Mutex::new(Vec::new()),
        sent: Mutex::new(Vec::new()),
        stop: AtomicBool::new(false),
    });

    let mut threads = Vec::new();
    let acceptor = Arc::clone(&shared);
    threads.push(thread::spawn(move || {
        let mut conns: Vec<JoinHandle<()>> = Vec::new();
        while !acceptor.stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    if stream.set_nonblocking(false).is_err() {
                        continue;
                    }
                    let _ = stream.set_nodelay(true);
                    let s = Arc::clone(&acceptor);
                    conns.push(thread::spawn(move || s.serve_connection(stream)));
                    conns.retain(|c| !c.is_finished());
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    thread::sleep(POLL);
                }
            }
        }
        for c in conns {
            let _ = c.join();
        }
    }));
    if role == DaemonRole::V {
        let sweeper = Arc::clone(&shared);
        threads.push(thread::spawn(move || sweeper.sweep_loop()));
    }
    Ok(DaemonHandle {
        local_addr,
        shared,
        threads,
    })
}

/// Runs the daemon in the foreground until the process is stopped.
pub fn serve(config: DaemonConfig) -> Result<(), TransportError> {
    spawn(config)?.wait();
    Ok(())
}
