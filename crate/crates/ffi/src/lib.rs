//! C ABI for the certainty-guided decoding engine.
//!
//! Every function here follows the same conventions:
//!
//! - Fallible calls return a `CGR_STATUS_*` code and write their result
//!   through an `out` pointer, which is touched only on `CGR_STATUS_OK`.
//! - Handles are opaque. Each is released exactly once with its matching
//!   `_free` function; every `_free` tolerates null.
//! - Strings returned as `*const c_char` are borrowed — from the handle
//!   they were read from, or from thread-local storage for
//!   [`cgr_last_error_message`] — and must not be freed. Strings returned
//!   through an `out: *mut *mut c_char` are owned by the caller and must be
//!   released with [`cgr_string_free`].
//! - After any call returns non-OK, [`cgr_last_error_message`] holds a
//!   human-readable reason. The message is per-thread and stays valid until
//!   the next failing call on the same thread.
//! - Panics never unwind across the boundary; they are caught and surfaced
//!   as [`CGR_STATUS_PANIC`].
//!
//! The committed header `include/cgr.h` mirrors this surface; `tests/abi.rs`
//! keeps the two from drifting apart.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::Arc;

use cgr_core::decoder::{decode, BackendPair, DecodeParams, DecodingMode, ReasoningTrace};
use cgr_core::{BackendSpec, Error, TokenBackend};

/// The call succeeded.
pub const CGR_STATUS_OK: i32 = 0;
/// Invalid configuration: a malformed backend spec, an unknown mode, or
/// decode parameters outside their documented ranges.
pub const CGR_STATUS_CONFIG: i32 = 1;
/// The token backend failed: unreachable server, protocol violation, or
/// context overflow.
pub const CGR_STATUS_BACKEND: i32 = 2;
/// Data produced or consumed by the engine was unusable.
pub const CGR_STATUS_DATA: i32 = 3;
/// A required pointer argument was null.
pub const CGR_STATUS_NULL_ARG: i32 = 4;
/// An internal panic was caught at the boundary.
pub const CGR_STATUS_PANIC: i32 = 5;
/// A string argument was not valid UTF-8.
pub const CGR_STATUS_UTF8: i32 = 6;

/// Plain greedy decoding; any stop token ends thinking.
pub const CGR_MODE_BASELINE: u32 = 0;
/// Every stop token is replaced with a continuation cue until the budget
/// runs out.
pub const CGR_MODE_BUDGET_FORCING: u32 = 1;
/// Certainty probes at a fixed interval; certification exits early.
pub const CGR_MODE_CGR: u32 = 2;
/// Interval probes plus probed stop attempts; uncertified stops are forced
/// to continue.
pub const CGR_MODE_CGR_WITH_FORCING: u32 = 3;

/// An instantiated token backend behind an opaque handle.
pub struct CgrBackend {
    inner: Arc<dyn TokenBackend>,
}

/// A completed decode run behind an opaque handle.
pub struct CgrTrace {
    inner: ReasoningTrace,
    /// Cached for [`cgr_trace_stop_reason`], which returns a borrowed
    /// pointer that must outlive the call.
    stop_reason: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', "\u{fffd}");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes were just removed");
    });
}

/// Record the error and map it onto the status buckets shared with the
/// CLI's exit codes.
fn fail(err: &Error) -> i32 {
    set_last_error(&err.to_string());
    i32::from(err.exit_code())
}

fn fail_null(what: &str) -> i32 {
    set_last_error(&format!("{what} must not be null"));
    CGR_STATUS_NULL_ARG
}

/// Borrow a required UTF-8 string argument, or produce the failing status.
unsafe fn text_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| {
        set_last_error(&format!("{what} is not valid UTF-8: {e}"));
        CGR_STATUS_UTF8
    })
}

/// Run a fallible body, converting any panic into [`CGR_STATUS_PANIC`]
/// instead of letting it unwind into the caller's frames.
fn guard<F: FnOnce() -> i32>(body: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("internal panic: {message}"));
            CGR_STATUS_PANIC
        }
    }
}

fn decoding_mode(raw: u32) -> Option<DecodingMode> {
    Some(match raw {
        CGR_MODE_BASELINE => DecodingMode::Baseline,
        CGR_MODE_BUDGET_FORCING => DecodingMode::BudgetForcing,
        CGR_MODE_CGR => DecodingMode::Cgr,
        CGR_MODE_CGR_WITH_FORCING => DecodingMode::CgrWithForcing,
        _ => return None,
    })
}

/// The same parameter rules the run configuration enforces, for callers
/// that bypass it.
fn validate_params(params: &DecodeParams) -> Result<(), Error> {
    if params.probe_interval < 1 {
        return Err(Error::Config("probe interval must be at least 1".into()));
    }
    if params.budget < params.probe_interval {
        return Err(Error::Config(format!(
            "budget {} is smaller than the probe interval {}",
            params.budget, params.probe_interval
        )));
    }
    if !params.threshold.is_finite() || !(0.0..=1.0).contains(&params.threshold) {
        return Err(Error::Config(format!("threshold {} outside [0, 1]", params.threshold)));
    }
    Ok(())
}

/// Engine version as a static string; never freed.
#[no_mangle]
pub extern "C" fn cgr_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Reason for the most recent failure on this thread. Borrowed; valid
/// until the next failing call on the same thread. Meaningful only right
/// after a call returned non-OK.
#[no_mangle]
pub extern "C" fn cgr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parse a backend spec (`mock:...`, `trace:PATH`, `remote:URL,...`) and
/// instantiate it with the given seed. On success writes a handle the
/// caller must release with [`cgr_backend_free`]. Remote backends connect
/// eagerly, so an unreachable server fails here, not at decode time.
#[no_mangle]
pub unsafe extern "C" fn cgr_backend_new(
    spec: *const c_char,
    seed: u64,
    out: *mut *mut CgrBackend,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let spec = match text_arg(spec, "spec") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let parsed = match BackendSpec::from_str(spec) {
            Ok(parsed) => parsed,
            Err(e) => return fail(&e),
        };
        match parsed.instantiate(seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CgrBackend { inner }));
                CGR_STATUS_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a backend handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn cgr_backend_free(backend: *mut CgrBackend) {
    if !backend.is_null() {
        drop(Box::from_raw(backend));
    }
}

/// Run one decode. `prompt` is the full rendered prompt text — the ABI
/// does no templating. `probe` selects the backend certainty probes run
/// on; pass null to probe the generation backend. On success writes a
/// trace handle the caller must release with [`cgr_trace_free`]. Answer
/// extraction is capped at the engine default of four tokens.
#[no_mangle]
pub unsafe extern "C" fn cgr_decode(
    backend: *const CgrBackend,
    probe: *const CgrBackend,
    prompt: *const c_char,
    mode: u32,
    budget: u64,
    threshold: f64,
    probe_interval: u64,
    out: *mut *mut CgrTrace,
) -> i32 {
    guard(|| {
        if backend.is_null() {
            return fail_null("backend");
        }
        if out.is_null() {
            return fail_null("out");
        }
        let prompt = match text_arg(prompt, "prompt") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let Some(mode) = decoding_mode(mode) else {
            set_last_error(&format!("unknown mode {mode} (expected 0..=3)"));
            return CGR_STATUS_CONFIG;
        };
        let params = DecodeParams { budget, threshold, probe_interval, ..DecodeParams::default() };
        if let Err(e) = validate_params(&params) {
            return fail(&e);
        }
        let gen: &dyn TokenBackend = (*backend).inner.as_ref();
        let pair = if probe.is_null() {
            BackendPair::single(gen)
        } else {
            BackendPair::distinct_unless_same(gen, (*probe).inner.as_ref())
        };
        let question = match gen.tokenize(prompt) {
            Ok(tokens) => tokens,
            Err(e) => return fail(&e),
        };
        match decode("ffi", &question, pair, mode, &params) {
            Ok(trace) => {
                let stop_reason =
                    CString::new(trace.stop_reason.kind()).expect("kind names are ASCII");
                *out = Box::into_raw(Box::new(CgrTrace { inner: trace, stop_reason }));
                CGR_STATUS_OK
            }
            Err(e) => fail(&e.source),
        }
    })
}

/// Thinking tokens spent from the budget; 0 for a null trace.
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_thinking_tokens_used(trace: *const CgrTrace) -> u64 {
    if trace.is_null() {
        return 0;
    }
    (*trace).inner.thinking_tokens_used
}

/// Stable stop-reason name (`"early_exit_certainty"`, `"budget_exhausted"`,
/// `"natural_stop"`, `"natural_stop_certified"`). Borrowed from the trace;
/// null for a null trace.
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_stop_reason(trace: *const CgrTrace) -> *const c_char {
    if trace.is_null() {
        return std::ptr::null();
    }
    (*trace).stop_reason.as_ptr()
}

/// Thinking-token count at stop, or -1 when the reason carries none
/// (budget exhaustion, or a null trace).
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_stop_step(trace: *const CgrTrace) -> i64 {
    if trace.is_null() {
        return -1;
    }
    (*trace).inner.stop_reason.step().map_or(-1, |step| step as i64)
}

/// Stop tokens replaced with continuation cues; 0 for a null trace.
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_forced_wait_count(trace: *const CgrTrace) -> u64 {
    if trace.is_null() {
        return 0;
    }
    (*trace).inner.forced_wait_count
}

/// Number of certainty probes that fired; 0 for a null trace.
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_probe_count(trace: *const CgrTrace) -> u64 {
    if trace.is_null() {
        return 0;
    }
    (*trace).inner.probe_events.len() as u64
}

/// Tokens generated inside probe forks; never counted against the budget.
/// 0 for a null trace.
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_probe_overhead_tokens(trace: *const CgrTrace) -> u64 {
    if trace.is_null() {
        return 0;
    }
    (*trace).inner.probe_overhead_tokens
}

/// The extracted final answer, or -1 for an abstention (unparseable
/// extraction, or a null trace).
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_final_answer(trace: *const CgrTrace) -> i32 {
    if trace.is_null() {
        return -1;
    }
    (*trace).inner.final_answer.parsed_value.map_or(-1, i32::from)
}

/// Certainty of the final answer: the minimum answer-token probability,
/// 0.0 when extraction failed or the trace is null.
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_final_certainty(trace: *const CgrTrace) -> f64 {
    if trace.is_null() {
        return 0.0;
    }
    (*trace).inner.final_certainty
}

/// Serialize the complete trace — tokens, probe events, stop reason,
/// answer — as a JSON document. On success writes an owned string the
/// caller must release with [`cgr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_to_json(trace: *const CgrTrace, out: *mut *mut c_char) -> i32 {
    guard(|| {
        if trace.is_null() {
            return fail_null("trace");
        }
        if out.is_null() {
            return fail_null("out");
        }
        match serde_json::to_string(&(*trace).inner) {
            Ok(json) => match CString::new(json) {
                Ok(owned) => {
                    *out = owned.into_raw();
                    CGR_STATUS_OK
                }
                Err(_) => {
                    set_last_error("serialized trace contained a NUL byte");
                    CGR_STATUS_DATA
                }
            },
            Err(e) => {
                set_last_error(&format!("trace serialization failed: {e}"));
                CGR_STATUS_DATA
            }
        }
    })
}

/// Release a trace handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn cgr_trace_free(trace: *mut CgrTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Release a string returned through an `out: *mut *mut c_char` parameter.
/// Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn cgr_string_free(string: *mut c_char) {
    if !string.is_null() {
        drop(CString::from_raw(string));
    }
}
