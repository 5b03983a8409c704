//! Three daemons on loopback, keyed from a scenario's principals.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::time::Duration;

use kerbtrip::crypto::{derive_key, SymmetricKey};
use kerbtrip::netsim::ScenarioSpec;
use kerbtrip::protocol::{MessageKind, PrincipalId};
use kerbtrip::transport::{spawn_on, ClientAuthConfig, DaemonConfig, DaemonHandle, DaemonRole};
use tempfile::TempDir;

pub struct LiveRealm {
    pub as_: DaemonHandle,
    pub tgs: DaemonHandle,
    pub v: DaemonHandle,
    pub spec: ScenarioSpec,
    pub dir: TempDir,
}

fn bind() -> (TcpListener, String) {
    let l = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = l.local_addr().unwrap().to_string();
    (l, addr)
}

impl LiveRealm {
    /// `timer_secs` overrides the scenario's challenge timer on V.
    pub fn start(spec: &ScenarioSpec, timer_secs: Option<i64>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        for (label, tab) in spec.keytabs().unwrap() {
            tab.save(dir.path().join(format!("{label}.keytab"))).unwrap();
        }
        let (as_l, as_addr) = bind();
        let (tgs_l, tgs_addr) = bind();
        let (v_l, v_addr) = bind();
        let mut timing = spec.timing.principal_timing();
        if let Some(t) = timer_secs {
            timing.timer_duration = t;
        }
        let variant = spec.variant();
        let cfg = |role: DaemonRole, label: &str, peers: &[(&str, &str)]| {
            let mut c = DaemonConfig::new(role, "127.0.0.1:0", dir.path().join(format!("{label}.keytab")), variant);
            c.timing = timing;
            for (name, addr) in peers {
                c = c.peer(*name, *addr);
            }
            c
        };
        let v = spawn_on(cfg(DaemonRole::V, "v", &[("tgs", &tgs_addr)]), v_l).unwrap();
        let tgs = spawn_on(cfg(DaemonRole::Tgs, "tgs", &[("as", &as_addr), ("v", &v_addr)]), tgs_l).unwrap();
        let as_ = spawn_on(cfg(DaemonRole::As, "as", &[("tgs", &tgs_addr)]), as_l).unwrap();
        LiveRealm {
            as_,
            tgs,
            v,
            spec: spec.clone(),
            dir,
        }
    }

    pub fn peers(&self) -> BTreeMap<String, String> {
        [("as", &self.as_), ("tgs", &self.tgs), ("v", &self.v)]
            .into_iter()
            .map(|(n, h)| (n.to_string(), h.local_addr().to_string()))
            .collect()
    }

    pub fn client_keys(&self, client: &str) -> [SymmetricKey; 3] {
        let c = self
            .spec
            .principals
            .clients
            .iter()
            .find(|c| c.id == client)
            .expect("client in scenario");
        [1u8, 2, 3].map(|i| derive_key(&c.passwords[i as usize - 1], client, i).unwrap())
    }

    pub fn client_config(&self, client: &str, stop_after: Option<MessageKind>) -> ClientAuthConfig {
        ClientAuthConfig {
            client: PrincipalId::new(client).unwrap(),
            keys: self.client_keys(client),
            tgs_id: PrincipalId::new("tgs").unwrap(),
            server: PrincipalId::new("v").unwrap(),
            peers: self.peers(),
            variant: self.spec.variant(),
            timing: self.spec.timing.principal_timing(),
            io_timeout: Duration::from_secs(5),
            stop_after,
        }
    }
}

/// Polls `cond` every 20ms for up to `secs` seconds.
pub fn wait_for(secs: u64, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = std::time::Instant::now() + Duration::from_secs(secs);
    while std::time::Instant::now() < deadline {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    cond()
}
