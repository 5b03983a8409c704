use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use kerbtrip_ffi::*;

const HONEST_TRIPLE: &str = include_str!("../../core/scenarios/honest-triple.scn");
const ATTACK2_SILENT: &str = include_str!("../../core/scenarios/attack2-triple-silent.scn");

fn last_error() -> String {
    let p = kt_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> *mut KtScenario {
    let text = CString::new(text).unwrap();
    let mut scn = ptr::null_mut();
    assert_eq!(unsafe { kt_scenario_parse(text.as_ptr(), &mut scn) }, KtStatus::Ok);
    scn
}

fn run(scn: *const KtScenario, seed: u64) -> *mut KtRun {
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { kt_sim_run(scn, seed, &mut run) }, KtStatus::Ok);
    run
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { kt_string_free(p) };
    s
}

#[test]
fn derive_key_matches_hashlib() {
    // hashlib.sha256(b"correct horse\0alice\0\x01")
    let pw = CString::new("correct horse").unwrap();
    let who = CString::new("alice").unwrap();
    let mut out = [0u8; 32];
    let st = unsafe { kt_derive_key(pw.as_ptr(), who.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(st, KtStatus::Ok);
    assert_eq!(
        hex::encode(out),
        "a6300ccbe9bf88e0542ca9fec7276d7d9994b1ee44cf36e37068f573693264a7"
    );
}

#[test]
fn derive_key_rejects_bad_index_and_nulls() {
    let pw = CString::new("pw").unwrap();
    let who = CString::new("alice").unwrap();
    let mut out = [0u8; 32];
    assert_eq!(
        unsafe { kt_derive_key(pw.as_ptr(), who.as_ptr(), 0, out.as_mut_ptr()) },
        KtStatus::InvalidArgument
    );
    assert!(last_error().contains('0'));
    assert_eq!(
        unsafe { kt_derive_key(ptr::null(), who.as_ptr(), 1, out.as_mut_ptr()) },
        KtStatus::NullArgument
    );
    assert!(last_error().contains("password"));
    assert_eq!(
        unsafe { kt_derive_key(pw.as_ptr(), who.as_ptr(), 1, ptr::null_mut()) },
        KtStatus::NullArgument
    );
    let bad = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { kt_derive_key(bad.as_ptr().cast(), who.as_ptr(), 1, out.as_mut_ptr()) },
        KtStatus::InvalidUtf8
    );
}

#[test]
fn success_clears_last_error() {
    let mut t = 0u8;
    assert_eq!(unsafe { kt_frame_check(b"junk".as_ptr(), 4, &mut t) }, KtStatus::Codec);
    assert!(!kt_last_error().is_null());
    let scn = parse(HONEST_TRIPLE);
    assert!(kt_last_error().is_null());
    unsafe { kt_scenario_free(scn) };
}

#[test]
fn frame_check_reports_type_byte() {
    let scn = parse(HONEST_TRIPLE);
    let r = run(scn, 1);
    let trace = take_string(unsafe { kt_run_trace(r, false) });
    let mut seen = Vec::new();
    for line in trace.lines() {
        let ev: serde_json::Value = serde_json::from_str(line).unwrap();
        if ev["kind"] == "send" {
            let bytes = hex::decode(ev["frame"].as_str().expect("send carries a frame")).unwrap();
            let mut t = 0u8;
            assert_eq!(
                unsafe { kt_frame_check(bytes.as_ptr(), bytes.len(), &mut t) },
                KtStatus::Ok
            );
            seen.push(t);
            let mut flipped = bytes.clone();
            let last = flipped.len() - 1;
            flipped.truncate(last);
            assert_eq!(
                unsafe { kt_frame_check(flipped.as_ptr(), flipped.len(), ptr::null_mut()) },
                KtStatus::Codec
            );
        }
    }
    // M1 M2_1 M2_2 M3 M4_1 M4_2 M5 M6 M7 M8
    seen.sort();
    assert_eq!(seen, vec![0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a]);
    unsafe {
        kt_run_free(r);
        kt_scenario_free(scn);
    }
}

#[test]
fn empty_frame_is_a_codec_error() {
    assert_eq!(
        unsafe { kt_frame_check(ptr::null(), 0, ptr::null_mut()) },
        KtStatus::Codec
    );
    assert_eq!(
        unsafe { kt_frame_check(ptr::null(), 3, ptr::null_mut()) },
        KtStatus::NullArgument
    );
}

#[test]
fn freshness_window_is_inclusive() {
    assert!(kt_check_freshness(1000, 1120, 120));
    assert!(kt_check_freshness(1120, 1000, 120));
    assert!(!kt_check_freshness(1000, 1121, 120));
}

#[test]
fn sim_run_verdicts() {
    let honest = parse(HONEST_TRIPLE);
    let attack = parse(ATTACK2_SILENT);
    let (h, a) = (run(honest, 7), run(attack, 7));
    unsafe {
        assert_eq!(kt_run_attacker_succeeded(h), 0);
        assert_eq!(kt_run_alert_count(h), 0);
        assert_eq!(kt_run_grant_count(h), 1);
        assert_eq!(kt_run_attacker_succeeded(a), 0);
        assert_eq!(kt_run_alert_count(a), 1);
        assert_eq!(kt_run_notice_count(a), 1);
        assert!(kt_run_final_tick(a) > kt_run_final_tick(h));
        assert_eq!(kt_run_attacker_succeeded(ptr::null()), -1);
    }
    let summary = take_string(unsafe { kt_run_summary(a) });
    assert!(summary.starts_with("attacker_succeeded=false alerts=1"), "{summary}");
    assert!(unsafe { kt_run_summary(ptr::null()) }.is_null());
    unsafe {
        kt_run_free(h);
        kt_run_free(a);
        kt_scenario_free(honest);
        kt_scenario_free(attack);
    }
}

#[test]
fn same_seed_same_canonical_trace() {
    let scn = parse(ATTACK2_SILENT);
    let (r1, r2) = (run(scn, 42), run(scn, 42));
    let t1 = take_string(unsafe { kt_run_trace(r1, true) });
    let t2 = take_string(unsafe { kt_run_trace(r2, true) });
    assert_eq!(t1, t2);
    assert!(!t1.contains("\"frame\""));
    unsafe {
        kt_run_free(r1);
        kt_run_free(r2);
        kt_scenario_free(scn);
    }
}

#[test]
fn scenario_errors() {
    let mut scn = ptr::null_mut();
    let bad = CString::new("name = 3").unwrap();
    assert_eq!(unsafe { kt_scenario_parse(bad.as_ptr(), &mut scn) }, KtStatus::Parse);
    assert!(scn.is_null());
    assert!(!last_error().is_empty());
    let missing = CString::new("/nonexistent/x.scn").unwrap();
    assert_eq!(unsafe { kt_scenario_load(missing.as_ptr(), &mut scn) }, KtStatus::Io);
    assert!(last_error().contains("/nonexistent/x.scn"));
    assert_eq!(
        unsafe { kt_scenario_parse(bad.as_ptr(), ptr::null_mut()) },
        KtStatus::NullArgument
    );
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { kt_sim_run(ptr::null(), 1, &mut run) }, KtStatus::NullArgument);
    unsafe {
        kt_scenario_free(ptr::null_mut());
        kt_run_free(ptr::null_mut());
        kt_string_free(ptr::null_mut());
    }
}

#[test]
fn scenario_load_from_file() {
    let dir = std::env::temp_dir().join(format!("kt-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("honest.scn");
    std::fs::write(&path, HONEST_TRIPLE).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut scn = ptr::null_mut();
    assert_eq!(unsafe { kt_scenario_load(cpath.as_ptr(), &mut scn) }, KtStatus::Ok);
    let r = run(scn, 1);
    assert_eq!(unsafe { kt_run_grant_count(r) }, 1);
    unsafe {
        kt_run_free(r);
        kt_scenario_free(scn);
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(kt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn have_cc() -> bool {
    Command::new("cc")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

#[test]
fn header_is_generated_and_compiles_as_c() {
    let header = manifest_dir().join("include/kerbtrip.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "kt_derive_key",
        "kt_sim_run",
        "kt_run_trace",
        "kt_string_free",
        "KT_STATUS_CODEC",
    ] {
        assert!(text.contains(f), "header lacks {f}");
    }
    if !have_cc() {
        eprintln!("cc not found; skipping compile check");
        return;
    }
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn c_program_links_against_static_lib() {
    if !have_cc() {
        eprintln!("cc not found; skipping link check");
        return;
    }
    // target/<profile>/deps/<test exe>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libkerbtrip_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping link check", lib.display());
        return;
    }
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c_link");
    std::fs::create_dir_all(&work).unwrap();
    let src = work.join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "kerbtrip.h"

int main(void) {
    uint8_t key[32];
    if (kt_derive_key("correct horse", "alice", 1, key) != KT_STATUS_OK) return 10;
    if (key[0] != 0xa6 || key[31] != 0xa7) return 11;
    if (kt_derive_key("x", "alice", 4, key) != KT_STATUS_INVALID_ARGUMENT) return 12;
    if (kt_last_error() == NULL) return 13;
    uint8_t junk[] = {'K', 'T', 'P', '1', 0x7f, 0, 0, 0, 0};
    if (kt_frame_check(junk, sizeof junk, NULL) != KT_STATUS_CODEC) return 14;
    if (!kt_check_freshness(100, 220, 120)) return 15;
    printf("ok %s\n", kt_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = work.join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "link failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&bin).output().unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stdout)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
