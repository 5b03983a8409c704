mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use common::{wait_for, LiveRealm};
use kerbtrip::crypto::derive_key;
use kerbtrip::netsim::{bundled, EventKind};
use kerbtrip::principals::ClientOutcome;
use kerbtrip::protocol::{Incident, MessageKind};
use kerbtrip::transport::{client_auth, ClientAuthError};

fn kinds(steps: &[kerbtrip::transport::Step]) -> Vec<MessageKind> {
    steps.iter().map(|s| s.msg.kind()).collect()
}

#[test]
fn triple_handshake_over_tcp() {
    let realm = LiveRealm::start(&bundled("honest-triple").unwrap(), None);
    let mut out = Vec::new();
    let report = client_auth(&realm.client_config("alice", None), &mut out).unwrap();
    use MessageKind::*;
    assert_eq!(kinds(&report.steps), [M1, M2_1, M3, M4_1, M5, M6, M7, M8]);
    assert!(matches!(report.outcome, Some(ClientOutcome::Authenticated { .. })));
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().next().unwrap().starts_with("step 1 "));
    assert!(wait_for(2, || realm
        .v
        .events()
        .iter()
        .any(|e| e.kind == EventKind::Grant)));
    let tgs_sent: Vec<_> = realm.tgs.sent().iter().map(|m| m.kind()).collect();
    assert_eq!(tgs_sent, [M4_2, M4_1]);
}

#[test]
fn baseline_handshake_over_tcp() {
    let realm = LiveRealm::start(&bundled("honest-baseline").unwrap(), None);
    let report = client_auth(&realm.client_config("alice", None), &mut std::io::sink()).unwrap();
    use MessageKind::*;
    assert_eq!(kinds(&report.steps), [B1, B2, B3, B4, B5, B6]);
    assert!(matches!(report.outcome, Some(ClientOutcome::Authenticated { .. })));
}

#[test]
fn unanswered_challenge_reaches_the_as() {
    let realm = LiveRealm::start(&bundled("honest-triple").unwrap(), Some(1));
    let report = client_auth(
        &realm.client_config("alice", Some(MessageKind::M5)),
        &mut std::io::sink(),
    )
    .unwrap();
    assert!(report.outcome.is_none());
    assert!(
        wait_for(5, || !realm.as_.notices().is_empty()),
        "no notice: {:?}",
        realm.v.events()
    );
    let notices = realm.as_.notices();
    assert_eq!(notices.len(), 1);
    assert_eq!(notices[0].incident, Incident::Timeout);
    assert_eq!(notices[0].client.as_str(), "alice");
    let v_alerts = realm.v.events().iter().filter(|e| e.kind == EventKind::Alert).count();
    assert_eq!(v_alerts, 1);
    assert!(realm.tgs.sent().iter().any(|m| m.kind() == MessageKind::M10));
    assert!(realm.v.events().iter().all(|e| e.kind != EventKind::Grant));
}

#[test]
fn garbage_closes_only_that_connection() {
    let realm = LiveRealm::start(&bundled("honest-triple").unwrap(), None);
    let mut s = TcpStream::connect(realm.as_.local_addr()).unwrap();
    s.write_all(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    s.set_read_timeout(Some(Duration::from_secs(3))).unwrap();
    let mut buf = [0u8; 16];
    assert_eq!(s.read(&mut buf).unwrap_or(0), 0, "daemon should close the connection");
    assert!(realm
        .as_
        .events()
        .iter()
        .any(|e| e.kind == EventKind::Drop && e.meta.contains("malformed")));
    // still serving
    let report = client_auth(&realm.client_config("alice", None), &mut std::io::sink()).unwrap();
    assert!(report.outcome.is_some());
}

#[test]
fn wrong_password_is_a_protocol_failure() {
    let realm = LiveRealm::start(&bundled("honest-triple").unwrap(), None);
    let mut cfg = realm.client_config("alice", None);
    cfg.keys[0] = derive_key("not the password", "alice", 1).unwrap();
    let err = client_auth(&cfg, &mut std::io::sink()).unwrap_err();
    assert!(matches!(err, ClientAuthError::Protocol(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn wrong_third_password_raises_bad_password() {
    let realm = LiveRealm::start(&bundled("honest-triple").unwrap(), None);
    let mut cfg = realm.client_config("alice", None);
    cfg.keys[2] = derive_key("not the password", "alice", 3).unwrap();
    let err = client_auth(&cfg, &mut std::io::sink()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(wait_for(3, || !realm.as_.notices().is_empty()));
    assert_eq!(realm.as_.notices()[0].incident, Incident::BadPassword);
}

#[test]
fn tgs_down_is_a_network_failure() {
    let realm = LiveRealm::start(&bundled("honest-triple").unwrap(), None);
    let cfg = realm.client_config("alice", None);
    let LiveRealm { as_, tgs, v, .. } = realm;
    tgs.shutdown();
    let err = client_auth(&cfg, &mut std::io::sink()).unwrap_err();
    assert!(matches!(err, ClientAuthError::Network(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
    drop((as_, v));
}

#[test]
fn no_as_address_is_reported() {
    let realm = LiveRealm::start(&bundled("honest-triple").unwrap(), None);
    let mut cfg = realm.client_config("alice", None);
    cfg.peers.remove("as");
    let err = client_auth(&cfg, &mut std::io::sink()).unwrap_err();
    assert!(matches!(err, ClientAuthError::MissingPeer(_)));
}
