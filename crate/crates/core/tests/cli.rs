mod common;

use std::process::{Command, Output};

use common::LiveRealm;
use kerbtrip::netsim::bundled;

fn kerbtrip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kerbtrip"))
        .args(args)
        .env("KERBTRIP_LOG", "off")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sim_run_bundled_scenario() {
    let o = kerbtrip(&["sim-run", "bundled:attack2-triple-silent"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("attacker_succeeded=false alerts=1"), "{out}");
    assert!(out.contains("notice: client=alice incident=timeout"), "{out}");
    assert!(out.contains("expect: ok"));
}

#[test]
fn sim_run_expectation_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.scn");
    let text = include_str!("../scenarios/attack1-triple.scn")
        .replace("attacker_succeeded = false", "attacker_succeeded = true");
    std::fs::write(&path, text).unwrap();
    let o = kerbtrip(&["sim-run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}{}", stdout(&o), stderr(&o));
    assert!(
        stdout(&o).contains("expect mismatch: attacker_succeeded"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn sim_run_variant_override() {
    let o = kerbtrip(&["sim-run", "bundled:honest-triple", "--variant", "baseline"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("variant=baseline"));
    assert!(stdout(&o).contains("challenges=0"), "{}", stdout(&o));
    // adversary scripts name frames of one variant
    let o = kerbtrip(&["sim-run", "bundled:attack1-triple", "--variant", "baseline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not in this variant"), "{}", stderr(&o));
}

#[test]
fn sim_run_timer_override() {
    // a one-tick timer expires before the honest M7 can arrive
    let o = kerbtrip(&["sim-run", "bundled:honest-triple", "--timer", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("alerts=1"), "{}", stdout(&o));
}

#[test]
fn sim_run_errors_exit_1() {
    let o = kerbtrip(&["sim-run", "/nonexistent/file.scn"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("cannot read /nonexistent/file.scn"),
        "{}",
        stderr(&o)
    );
    let o = kerbtrip(&["sim-run", "bundled:nope"]);
    assert_eq!(o.status.code(), Some(1));
    let o = kerbtrip(&["sim-run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.scn");
    std::fs::write(&path, "name = \"x\"\n[variant]\nkind = \"quadruple\"\n").unwrap();
    let o = kerbtrip(&["sim-run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("parse"), "{}", stderr(&o));
}

#[test]
fn help_exits_0() {
    let o = kerbtrip(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in [
        "sim-run",
        "sim-matrix",
        "trace-dump",
        "keytab-gen",
        "serve",
        "client-auth",
    ] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
}

#[test]
fn sim_matrix_prints_and_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("matrix.txt");
    let traces = dir.path().join("traces");
    let o = kerbtrip(&[
        "sim-matrix",
        "--out",
        table.to_str().unwrap(),
        "--trace-out",
        traces.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let written = std::fs::read_to_string(&table).unwrap();
    assert_eq!(written, stdout(&o));
    assert_eq!(written.lines().count(), 8);
    assert!(written.lines().skip(1).all(|l| l.ends_with(" ok")), "{written}");
    assert_eq!(std::fs::read_dir(&traces).unwrap().count(), 7);
    // same seed, same bytes
    let again = kerbtrip(&["sim-matrix"]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn trace_dump_filters_and_decodes() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = kerbtrip(&[
        "sim-run",
        "bundled:attack2-triple-wrongpw",
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = kerbtrip(&["trace-dump", trace.to_str().unwrap(), "--kind", "alert,notice"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2, "{out}");
    assert!(out.contains("incident=bad_password"));
    let o = kerbtrip(&["trace-dump", trace.to_str().unwrap(), "--kind", "inject", "--frames"]);
    assert!(stdout(&o).contains("M7"), "{}", stdout(&o));
    assert!(stdout(&o).contains("frame "), "{}", stdout(&o));
    std::fs::write(&trace, "not json\n").unwrap();
    assert_eq!(
        kerbtrip(&["trace-dump", trace.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn keytab_gen_writes_one_file_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let o = kerbtrip(&[
        "keytab-gen",
        "bundled:honest-triple",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["alice.keytab", "as.keytab", "tgs.keytab", "v.keytab"]);
    let v = std::fs::read_to_string(dir.path().join("v.keytab")).unwrap();
    assert!(v.starts_with("v:0:") && v.lines().count() == 1, "{v}");
}

#[test]
fn client_auth_against_live_daemons() {
    let realm = LiveRealm::start(&bundled("honest-triple").unwrap(), None);
    let peers = realm.peers();
    let peer_args: Vec<String> = peers.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut args = vec![
        "client-auth",
        "--client",
        "alice",
        "--password",
        "correct horse",
        "battery staple",
        "tr0ub4dor",
    ];
    for p in &peer_args {
        args.extend(["--peer", p.as_str()]);
    }
    let o = kerbtrip(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("step ")).count(), 8, "{out}");
    assert!(out.lines().last().unwrap().starts_with("MutualAuthOk"));

    let mut bad = args.clone();
    bad[4] = "wrong";
    let o = kerbtrip(&bad);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("client-auth failed: protocol"), "{}", stderr(&o));

    let keytab = realm.dir.path().join("alice.keytab");
    let mut with_tab = vec!["client-auth", "--client", "alice", "--keytab", keytab.to_str().unwrap()];
    for p in &peer_args {
        with_tab.extend(["--peer", p.as_str()]);
    }
    let o = kerbtrip(&with_tab);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn client_auth_network_failure_exits_1() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let as_peer = format!("as=127.0.0.1:{port}");
    let o = kerbtrip(&[
        "client-auth",
        "--client",
        "alice",
        "--password",
        "a",
        "b",
        "c",
        "--peer",
        &as_peer,
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("network"), "{}", stderr(&o));
}

#[test]
fn serve_refuses_missing_peers_and_keytabs() {
    let dir = tempfile::tempdir().unwrap();
    let o = kerbtrip(&[
        "keytab-gen",
        "bundled:honest-triple",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let tab = dir.path().join("tgs.keytab");
    let o = kerbtrip(&[
        "serve",
        "--role",
        "tgs",
        "--listen",
        "127.0.0.1:0",
        "--keytab",
        tab.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("as"), "{}", stderr(&o));
    let o = kerbtrip(&[
        "serve",
        "--role",
        "v",
        "--listen",
        "127.0.0.1:0",
        "--keytab",
        "/nonexistent.keytab",
        "--peer",
        "tgs=127.0.0.1:1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = kerbtrip(&[
        "serve",
        "--role",
        "kdc",
        "--listen",
        "127.0.0.1:0",
        "--keytab",
        tab.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
