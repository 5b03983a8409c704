//! C ABI over `kerbtrip`: key derivation, frame checking, and the scenario
//! simulator.
//!
//! Every fallible call returns a [`KtStatus`]. On failure a message is kept
//! per thread and can be read with [`kt_last_error`]. Strings handed out by
//! this library must be released with [`kt_string_free`]; handles with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kerbtrip::crypto::{derive_key, KEY_LEN};
use kerbtrip::netsim::{run_scenario, RunOutput, ScenarioError, ScenarioSpec};
use kerbtrip::protocol::{check_freshness, decode, Timestamp};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    Codec = 6,
    Simulation = 7,
    Panic = 99,
}

/// A parsed, validated scenario.
pub struct KtScenario {
    spec: ScenarioSpec,
}

/// The result of one simulator run.
pub struct KtRun {
    out: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: KtStatus, msg: impl Into<String>) -> KtStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> KtStatus) -> KtStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(KtStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, KtStatus> {
    if p.is_null() {
        return Err(fail(KtStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(KtStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn scenario_status(e: &ScenarioError) -> KtStatus {
    match e {
        ScenarioError::Io { .. } => KtStatus::Io,
        _ => KtStatus::Parse,
    }
}

fn into_c_string(s: String) -> *mut c_char {
    match CString::new(s) {
        Ok(c) => c.into_raw(),
        Err(_) => {
            set_error("string contains a NUL byte");
            ptr::null_mut()
        }
    }
}

/// Last error message on this thread, or NULL. Valid until the next call
/// into this library from the same thread.
#[no_mangle]
pub extern "C" fn kt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Derives the password key with the given index (1..=3) into `out`,
/// which must have room for 32 bytes.
///
/// # Safety
/// `password` and `principal` must be NUL-terminated strings; `out` must be
/// writable for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn kt_derive_key(
    password: *const c_char,
    principal: *const c_char,
    index: u8,
    out: *mut u8,
) -> KtStatus {
    guard(|| {
        let pw = match str_arg(password, "password") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let who = match str_arg(principal, "principal") {
            Ok(s) => s,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(KtStatus::NullArgument, "out is null");
        }
        match derive_key(pw, who, index) {
            Ok(k) => {
                ptr::copy_nonoverlapping(k.as_bytes().as_ptr(), out, KEY_LEN);
                KtStatus::Ok
            }
            Err(e) => fail(KtStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Decodes one complete wire frame. On success writes its type byte to
/// `out_type` (if not NULL).
///
/// # Safety
/// `bytes` must be readable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn kt_frame_check(bytes: *const u8, len: usize, out_type: *mut u8) -> KtStatus {
    guard(|| {
        if bytes.is_null() && len != 0 {
            return fail(KtStatus::NullArgument, "bytes is null");
        }
        let data = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(bytes, len)
        };
        match decode(data) {
            Ok(msg) => {
                if !out_type.is_null() {
                    *out_type = msg.kind().type_byte();
                }
                KtStatus::Ok
            }
            Err(e) => fail(KtStatus::Codec, e.to_string()),
        }
    })
}

/// True when `ts` lies within `window` seconds of `now`, either side.
#[no_mangle]
pub extern "C" fn kt_check_freshness(ts: i64, now: i64, window: u64) -> bool {
    check_freshness(Timestamp(ts), Timestamp(now), window)
}

/// Parses scenario TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kt_scenario_parse(text: *const c_char, out: *mut *mut KtScenario) -> KtStatus {
    guard(|| {
        if out.is_null() {
            return fail(KtStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(text, "text") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match ScenarioSpec::parse(text) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(KtScenario { spec }));
                KtStatus::Ok
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}

/// Reads and parses a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kt_scenario_load(path: *const c_char, out: *mut *mut KtScenario) -> KtStatus {
    guard(|| {
        if out.is_null() {
            return fail(KtStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match ScenarioSpec::load(path) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(KtScenario { spec }));
                KtStatus::Ok
            }
            Err(e) => {
                let msg = match &e {
                    ScenarioError::Io { source, .. } => format!("{e}: {source}"),
                    _ => e.to_string(),
                };
                fail(scenario_status(&e), msg)
            }
        }
    })
}

/// # Safety
/// `scenario` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn kt_scenario_free(scenario: *mut KtScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the simulator. The same scenario and seed always give the same run.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kt_sim_run(scenario: *const KtScenario, seed: u64, out: *mut *mut KtRun) -> KtStatus {
    guard(|| {
        if out.is_null() || scenario.is_null() {
            return fail(KtStatus::NullArgument, "scenario or out is null");
        }
        *out = ptr::null_mut();
        match run_scenario(&(*scenario).spec, seed) {
            Ok(run) => {
                *out = Box::into_raw(Box::new(KtRun { out: run }));
                KtStatus::Ok
            }
            Err(e) => fail(KtStatus::Simulation, e.to_string()),
        }
    })
}

/// # Safety
/// `run` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn kt_run_free(run: *mut KtRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// 1 if a node other than an honest client was granted service, 0 if not,
/// -1 for a NULL handle.
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn kt_run_attacker_succeeded(run: *const KtRun) -> i32 {
    match run.as_ref() {
        Some(r) => r.out.verdict.attacker_succeeded as i32,
        None => -1,
    }
}

/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn kt_run_alert_count(run: *const KtRun) -> usize {
    run.as_ref().map_or(0, |r| r.out.verdict.alerts.len())
}

/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn kt_run_notice_count(run: *const KtRun) -> usize {
    run.as_ref().map_or(0, |r| r.out.verdict.compromise_notices.len())
}

/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn kt_run_grant_count(run: *const KtRun) -> usize {
    run.as_ref().map_or(0, |r| r.out.verdict.service_granted_to.len())
}

/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn kt_run_final_tick(run: *const KtRun) -> i64 {
    run.as_ref().map_or(0, |r| r.out.verdict.final_tick)
}

/// One-line verdict summary. Free with [`kt_string_free`].
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn kt_run_summary(run: *const KtRun) -> *mut c_char {
    clear_error();
    match run.as_ref() {
        Some(r) => into_c_string(r.out.verdict.summary()),
        None => {
            set_error("run is null");
            ptr::null_mut()
        }
    }
}

/// The event trace as JSON lines. With `canonical` set, frame bytes are
/// left out. Free with [`kt_string_free`].
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn kt_run_trace(run: *const KtRun, canonical: bool) -> *mut c_char {
    clear_error();
    match run.as_ref() {
        Some(r) if canonical => into_c_string(r.out.trace.canonical_jsonl()),
        Some(r) => into_c_string(r.out.trace.to_jsonl()),
        None => {
            set_error("run is null");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
