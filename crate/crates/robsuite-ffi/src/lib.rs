//! C ABI for loading and scoring frozen robustness test suites.
//!
//! Handles are opaque and single-owner: every `*_load` call that returns
//! `RS_OK` hands the caller a pointer it must release exactly once with the
//! matching `*_free`. Functions never unwind across the boundary; failures
//! come back as an [`rs_status`] code with a human-readable message kept in
//! thread-local storage until the next call on the same thread. Suite
//! scoring runs forward passes only, same as the library path it wraps.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use robsuite::error::Error;
use robsuite::siamese::{self, Meter, SiameseSystem};
use robsuite::suite::{self, TestSuite};

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[allow(non_camel_case_types)]
pub enum rs_status {
    /// Success.
    RS_OK = 0,
    /// A required pointer argument was null.
    RS_NULL_ARGUMENT = 1,
    /// A path was not valid UTF-8, or an index was out of range.
    RS_INVALID_ARGUMENT = 2,
    /// The operating system refused a read.
    RS_IO_ERROR = 3,
    /// An artifact failed its integrity checks: bad magic, truncated
    /// payload, checksum or format-version mismatch, or a suite member
    /// outside its scheme's budget.
    RS_CORRUPT_ARTIFACT = 4,
    /// Input rejected by the library (shape mismatch, degenerate data, ...).
    RS_DOMAIN_ERROR = 5,
    /// A panic was caught at the boundary; state may be stale but the
    /// process is intact.
    RS_INTERNAL_ERROR = 6,
}

use rs_status::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    // NUL bytes cannot come from our own error formatting; replace them
    // defensively rather than losing the message.
    let clean = msg.replace('\0', "?");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn status_of(err: &Error) -> rs_status {
    if err.is_integrity() {
        return RS_CORRUPT_ARTIFACT;
    }
    match err {
        Error::Io { .. } => RS_IO_ERROR,
        Error::Config(_) => RS_INVALID_ARGUMENT,
        Error::Stage { source, .. } => status_of(source),
        _ => RS_DOMAIN_ERROR,
    }
}

/// Runs `f` with a panic guard; panics become `RS_INTERNAL_ERROR`.
fn guarded(f: impl FnOnce() -> rs_status) -> rs_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            RS_INTERNAL_ERROR
        }
    }
}

/// Decodes a caller path. `what` names the argument in error messages.
unsafe fn decode_path<'a>(ptr: *const c_char, what: &str) -> Result<&'a Path, rs_status> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(RS_NULL_ARGUMENT);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error(&format!("{what} is not valid UTF-8"));
            Err(RS_INVALID_ARGUMENT)
        }
    }
}

fn non_null<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, rs_status> {
    // Safety: caller contract, checked for null here.
    match unsafe { ptr.as_ref() } {
        Some(r) => Ok(r),
        None => {
            set_error(&format!("{what} is null"));
            Err(RS_NULL_ARGUMENT)
        }
    }
}

/// Loaded frozen suite. Opaque to C.
pub struct RsSuite {
    suite: TestSuite,
    /// NUL-terminated copies of the set names, pinned for the handle's life.
    set_names: Vec<CString>,
}

/// Loaded verification system. Opaque to C.
pub struct RsSystem {
    system: SiameseSystem,
    id: CString,
    clean_accuracy: f64,
}

/// Last error message for this thread, NUL-terminated. Valid until the next
/// library call on the same thread; empty string if no error occurred yet.
///
/// # Safety
/// The returned pointer must not be freed and must not be read after any
/// other call into this library from the same thread.
#[no_mangle]
pub unsafe extern "C" fn rs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a frozen suite from the directory written by the pipeline's suite
/// stage (`suite.json` plus its blobs). On success writes a handle to `out`.
///
/// # Safety
/// `dir` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer; both must stay valid for the duration of the
/// call. The handle written to `out` must be released with
/// [`rs_suite_free`].
#[no_mangle]
pub unsafe extern "C" fn rs_suite_load(dir: *const c_char, out: *mut *mut RsSuite) -> rs_status {
    guarded(|| {
        let dir = match decode_path(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        match suite::load_suite(dir) {
            Ok(suite) => {
                let set_names = suite
                    .sets
                    .iter()
                    .map(|s| CString::new(s.name.as_str()).unwrap_or_default())
                    .collect();
                *out = Box::into_raw(Box::new(RsSuite { suite, set_names }));
                RS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Releases a suite handle. Null is a no-op.
///
/// # Safety
/// `s` must be a pointer returned by [`rs_suite_load`] that has not been
/// freed yet; no other thread may use it concurrently or afterwards.
#[no_mangle]
pub unsafe extern "C" fn rs_suite_free(s: *mut RsSuite) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of test sets in the suite.
///
/// # Safety
/// `s` must be a live suite handle and `out` writable for one `uintptr_t`.
#[no_mangle]
pub unsafe extern "C" fn rs_suite_set_count(s: *const RsSuite, out: *mut usize) -> rs_status {
    guarded(|| {
        let handle = match non_null(s, "suite") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        *out = handle.suite.sets.len();
        RS_OK
    })
}

/// Total members across all sets.
///
/// # Safety
/// `s` must be a live suite handle and `out` writable for one `uintptr_t`.
#[no_mangle]
pub unsafe extern "C" fn rs_suite_member_count(s: *const RsSuite, out: *mut usize) -> rs_status {
    guarded(|| {
        let handle = match non_null(s, "suite") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        *out = handle.suite.total_members();
        RS_OK
    })
}

/// Name of set `index`, NUL-terminated. The pointer stays valid for the
/// life of the suite handle.
///
/// # Safety
/// `s` must be a live suite handle and `out` writable for one pointer. The
/// string written to `out` must not be freed and must not outlive `s`.
#[no_mangle]
pub unsafe extern "C" fn rs_suite_set_name(
    s: *const RsSuite,
    index: usize,
    out: *mut *const c_char,
) -> rs_status {
    guarded(|| {
        let handle = match non_null(s, "suite") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        match handle.set_names.get(index) {
            Some(name) => {
                *out = name.as_ptr();
                RS_OK
            }
            None => {
                set_error(&format!(
                    "set index {index} out of range ({} sets)",
                    handle.set_names.len()
                ));
                RS_INVALID_ARGUMENT
            }
        }
    })
}

/// Member count of set `index`.
///
/// # Safety
/// `s` must be a live suite handle and `out` writable for one `uintptr_t`.
#[no_mangle]
pub unsafe extern "C" fn rs_suite_set_size(
    s: *const RsSuite,
    index: usize,
    out: *mut usize,
) -> rs_status {
    guarded(|| {
        let handle = match non_null(s, "suite") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        match handle.suite.sets.get(index) {
            Some(set) => {
                *out = set.len();
                RS_OK
            }
            None => {
                set_error(&format!(
                    "set index {index} out of range ({} sets)",
                    handle.suite.sets.len()
                ));
                RS_INVALID_ARGUMENT
            }
        }
    })
}

/// Audits every member against its scheme's budget. Returns `RS_OK` when
/// all members pass and `RS_CORRUPT_ARTIFACT` (with a message naming the
/// first offender) when any violate membership.
///
/// # Safety
/// `s` must be a live suite handle.
#[no_mangle]
pub unsafe extern "C" fn rs_suite_verify(s: *const RsSuite) -> rs_status {
    guarded(|| {
        let handle = match non_null(s, "suite") {
            Ok(h) => h,
            Err(st) => return st,
        };
        match suite::verify_suite(&handle.suite) {
            Ok(reports) => {
                for r in &reports {
                    if r.violations > 0 {
                        set_error(&format!(
                            "set {}: {} of {} members outside the budget (first at {})",
                            r.name,
                            r.violations,
                            r.size,
                            r.first_violation.unwrap()
                        ));
                        return RS_CORRUPT_ARTIFACT;
                    }
                }
                RS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Loads a verification system from the directory written by the zoo stage
/// (`system.json` plus `weights.rbt`). On success writes a handle to `out`.
///
/// # Safety
/// `dir` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer; both must stay valid for the duration of the
/// call. The handle written to `out` must be released with
/// [`rs_system_free`].
#[no_mangle]
pub unsafe extern "C" fn rs_system_load(dir: *const c_char, out: *mut *mut RsSystem) -> rs_status {
    guarded(|| {
        let dir = match decode_path(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        match siamese::load_system(dir) {
            Ok(member) => {
                let id = CString::new(member.system.id.as_str()).unwrap_or_default();
                *out = Box::into_raw(Box::new(RsSystem {
                    system: member.system,
                    id,
                    clean_accuracy: member.clean_accuracy,
                }));
                RS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Releases a system handle. Null is a no-op.
///
/// # Safety
/// `s` must be a pointer returned by [`rs_system_load`] that has not been
/// freed yet; no other thread may use it concurrently or afterwards.
#[no_mangle]
pub unsafe extern "C" fn rs_system_free(s: *mut RsSystem) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// System identifier, NUL-terminated, valid for the life of the handle.
///
/// # Safety
/// `s` must be a live system handle and `out` writable for one pointer. The
/// string written to `out` must not be freed and must not outlive `s`.
#[no_mangle]
pub unsafe extern "C" fn rs_system_id(s: *const RsSystem, out: *mut *const c_char) -> rs_status {
    guarded(|| {
        let handle = match non_null(s, "system") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        *out = handle.id.as_ptr();
        RS_OK
    })
}

/// Acceptance threshold (cosine margin) of the system.
///
/// # Safety
/// `s` must be a live system handle and `out` writable for one `double`.
#[no_mangle]
pub unsafe extern "C" fn rs_system_kappa(s: *const RsSystem, out: *mut f64) -> rs_status {
    guarded(|| {
        let handle = match non_null(s, "system") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        *out = handle.system.kappa;
        RS_OK
    })
}

/// Clean verification accuracy recorded when the system was calibrated.
///
/// # Safety
/// `s` must be a live system handle and `out` writable for one `double`.
#[no_mangle]
pub unsafe extern "C" fn rs_system_clean_accuracy(
    s: *const RsSystem,
    out: *mut f64,
) -> rs_status {
    guarded(|| {
        let handle = match non_null(s, "system") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        *out = handle.clean_accuracy;
        RS_OK
    })
}

/// Scores the system on the whole suite with forward passes only and writes
/// the unweighted mean of per-set robustness (in [0, 1]) to `out_mean`.
///
/// # Safety
/// `s` and `sys` must be live handles and `out_mean` writable for one
/// `double`. Handles may be shared across threads for concurrent scoring;
/// they are never mutated after load.
#[no_mangle]
pub unsafe extern "C" fn rs_suite_evaluate(
    s: *const RsSuite,
    sys: *const RsSystem,
    out_mean: *mut f64,
) -> rs_status {
    guarded(|| {
        let suite_handle = match non_null(s, "suite") {
            Ok(h) => h,
            Err(st) => return st,
        };
        let sys_handle = match non_null(sys, "system") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out_mean.is_null() {
            set_error("out_mean is null");
            return RS_NULL_ARGUMENT;
        }
        match suite::evaluate_suite(&sys_handle.system, &suite_handle.suite, &Meter::new()) {
            Ok(eval) => {
                *out_mean = eval.mean_robustness;
                RS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Scores the system and writes per-set robustness into `out`, one value
/// per set in suite order. `len` must equal the set count.
///
/// # Safety
/// `s` and `sys` must be live handles and `out` writable for `len`
/// `double`s.
#[no_mangle]
pub unsafe extern "C" fn rs_suite_evaluate_sets(
    s: *const RsSuite,
    sys: *const RsSystem,
    out: *mut f64,
    len: usize,
) -> rs_status {
    guarded(|| {
        let suite_handle = match non_null(s, "suite") {
            Ok(h) => h,
            Err(st) => return st,
        };
        let sys_handle = match non_null(sys, "system") {
            Ok(h) => h,
            Err(st) => return st,
        };
        if out.is_null() {
            set_error("out is null");
            return RS_NULL_ARGUMENT;
        }
        if len != suite_handle.suite.sets.len() {
            set_error(&format!(
                "out has {len} slots for {} sets",
                suite_handle.suite.sets.len()
            ));
            return RS_INVALID_ARGUMENT;
        }
        match suite::evaluate_suite(&sys_handle.system, &suite_handle.suite, &Meter::new()) {
            Ok(eval) => {
                for (i, set) in eval.sets.iter().enumerate() {
                    *out.add(i) = set.robustness;
                }
                RS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}
