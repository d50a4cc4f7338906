//! Exercises the C ABI end to end from the Rust side — handle round-trips,
//! status buckets, accessor semantics — and pins the committed header to
//! the exported surface so the two cannot drift apart.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cgr_ffi::*;

const SPEC: &str = "mock:crossing_step=60,pre=0.5,post=0.99,noise=0,digits=204";

fn last_error() -> String {
    unsafe { CStr::from_ptr(cgr_last_error_message()) }.to_str().unwrap().to_string()
}

fn backend(spec: &str, seed: u64) -> *mut CgrBackend {
    let spec = CString::new(spec).unwrap();
    let mut handle: *mut CgrBackend = ptr::null_mut();
    let status = unsafe { cgr_backend_new(spec.as_ptr(), seed, &mut handle) };
    assert_eq!(status, CGR_STATUS_OK, "{}", last_error());
    assert!(!handle.is_null());
    handle
}

fn decode_ok(
    gen: *const CgrBackend,
    probe: *const CgrBackend,
    mode: u32,
    budget: u64,
    threshold: f64,
    interval: u64,
) -> *mut CgrTrace {
    let prompt = CString::new("What is 12 * 17?").unwrap();
    let mut trace: *mut CgrTrace = ptr::null_mut();
    let status = unsafe {
        cgr_decode(gen, probe, prompt.as_ptr(), mode, budget, threshold, interval, &mut trace)
    };
    assert_eq!(status, CGR_STATUS_OK, "{}", last_error());
    assert!(!trace.is_null());
    trace
}

#[test]
fn version_is_a_static_semver_string() {
    let version = unsafe { CStr::from_ptr(cgr_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn a_certified_early_exit_round_trips_through_the_abi() {
    let handle = backend(SPEC, 7);
    // Crossing at step 60 with probes every 25: the probes at 25 and 50
    // see pre-crossing certainty, the one at 75 certifies.
    let trace = decode_ok(handle, ptr::null(), CGR_MODE_CGR, 200, 0.97, 25);
    unsafe {
        assert_eq!(cgr_trace_thinking_tokens_used(trace), 75);
        assert_eq!(cgr_trace_stop_step(trace), 75);
        let reason = CStr::from_ptr(cgr_trace_stop_reason(trace)).to_str().unwrap();
        assert_eq!(reason, "early_exit_certainty");
        assert_eq!(cgr_trace_forced_wait_count(trace), 0);
        assert_eq!(cgr_trace_probe_count(trace), 3);
        assert!(cgr_trace_probe_overhead_tokens(trace) > 0);
        assert_eq!(cgr_trace_final_answer(trace), 204);
        assert!((cgr_trace_final_certainty(trace) - 0.99).abs() < 1e-12);
        cgr_trace_free(trace);
        cgr_backend_free(handle);
    }
}

#[test]
fn baseline_mode_exhausts_the_budget_without_probing() {
    let handle = backend(SPEC, 7);
    let trace = decode_ok(handle, ptr::null(), CGR_MODE_BASELINE, 120, 0.97, 25);
    unsafe {
        assert_eq!(cgr_trace_thinking_tokens_used(trace), 120);
        let reason = CStr::from_ptr(cgr_trace_stop_reason(trace)).to_str().unwrap();
        assert_eq!(reason, "budget_exhausted");
        assert_eq!(cgr_trace_stop_step(trace), -1, "budget exhaustion carries no step");
        assert_eq!(cgr_trace_probe_count(trace), 0);
        assert_eq!(cgr_trace_probe_overhead_tokens(trace), 0);
        cgr_trace_free(trace);
        cgr_backend_free(handle);
    }
}

#[test]
fn a_distinct_probe_backend_certifies_while_the_generator_answers() {
    // The probe model crosses at 40, the generator not until 600: an exit
    // at step 50 proves probes ran on the probe handle, and the low final
    // certainty proves answer extraction ran on the generator.
    let gen = backend("mock:crossing_step=600,pre=0.5,post=0.99,noise=0,digits=204", 7);
    let probe = backend("mock:crossing_step=40,pre=0.5,post=0.99,noise=0,digits=204", 11);
    let trace = decode_ok(gen, probe, CGR_MODE_CGR, 200, 0.97, 25);
    unsafe {
        assert_eq!(cgr_trace_stop_step(trace), 50);
        let reason = CStr::from_ptr(cgr_trace_stop_reason(trace)).to_str().unwrap();
        assert_eq!(reason, "early_exit_certainty");
        assert_eq!(cgr_trace_final_answer(trace), 204);
        assert!((cgr_trace_final_certainty(trace) - 0.5).abs() < 1e-12);
        cgr_trace_free(trace);
        cgr_backend_free(probe);
        cgr_backend_free(gen);
    }
}

#[test]
fn trace_json_matches_the_accessors() {
    let handle = backend(SPEC, 7);
    let trace = decode_ok(handle, ptr::null(), CGR_MODE_CGR, 200, 0.97, 25);
    let mut raw: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe { cgr_trace_to_json(trace, &mut raw) };
    assert_eq!(status, CGR_STATUS_OK, "{}", last_error());
    let json = unsafe { CStr::from_ptr(raw) }.to_str().unwrap().to_string();
    unsafe { cgr_string_free(raw) };

    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    unsafe {
        assert_eq!(value["thinking_tokens_used"], cgr_trace_thinking_tokens_used(trace));
        assert_eq!(value["stop_reason"]["kind"], "early_exit_certainty");
        assert_eq!(value["stop_reason"]["step"], 75);
        assert_eq!(value["final_answer"]["parsed_value"], 204);
        assert_eq!(value["probe_events"].as_array().unwrap().len(), 3);
        cgr_trace_free(trace);
        cgr_backend_free(handle);
    }
}

#[test]
fn bad_arguments_map_onto_the_documented_statuses() {
    let mut handle: *mut CgrBackend = ptr::null_mut();

    let status = unsafe { cgr_backend_new(ptr::null(), 7, &mut handle) };
    assert_eq!(status, CGR_STATUS_NULL_ARG);
    assert!(last_error().contains("spec"), "{}", last_error());

    let spec = CString::new(SPEC).unwrap();
    let status = unsafe { cgr_backend_new(spec.as_ptr(), 7, ptr::null_mut()) };
    assert_eq!(status, CGR_STATUS_NULL_ARG);

    let invalid_utf8 = [0xffu8, 0x00];
    let status = unsafe {
        cgr_backend_new(invalid_utf8.as_ptr().cast(), 7, &mut handle)
    };
    assert_eq!(status, CGR_STATUS_UTF8);

    let bogus = CString::new("bogus:x").unwrap();
    let status = unsafe { cgr_backend_new(bogus.as_ptr(), 7, &mut handle) };
    assert_eq!(status, CGR_STATUS_CONFIG);
    assert!(last_error().contains("bogus"), "{}", last_error());

    let unreachable = CString::new("remote:http://127.0.0.1:9,timeout_ms=300").unwrap();
    let status = unsafe { cgr_backend_new(unreachable.as_ptr(), 7, &mut handle) };
    assert_eq!(status, CGR_STATUS_BACKEND, "{}", last_error());
}

#[test]
fn bad_decode_parameters_fail_with_config_status() {
    let handle = backend(SPEC, 7);
    let prompt = CString::new("What is 12 * 17?").unwrap();
    let mut trace: *mut CgrTrace = ptr::null_mut();

    let cases: [(u32, u64, f64, u64, &str); 4] = [
        (9, 200, 0.97, 25, "mode"),
        (CGR_MODE_CGR, 200, 0.97, 0, "interval"),
        (CGR_MODE_CGR, 5, 0.97, 25, "smaller than"),
        (CGR_MODE_CGR, 200, 1.5, 25, "threshold"),
    ];
    for (mode, budget, threshold, interval, expected) in cases {
        let status = unsafe {
            cgr_decode(handle, ptr::null(), prompt.as_ptr(), mode, budget, threshold, interval, &mut trace)
        };
        assert_eq!(status, CGR_STATUS_CONFIG, "case {expected}");
        assert!(last_error().contains(expected), "{}", last_error());
        assert!(trace.is_null(), "out must not be written on failure");
    }

    let status = unsafe {
        cgr_decode(ptr::null(), ptr::null(), prompt.as_ptr(), CGR_MODE_CGR, 200, 0.97, 25, &mut trace)
    };
    assert_eq!(status, CGR_STATUS_NULL_ARG);

    unsafe { cgr_backend_free(handle) };
}

#[test]
fn null_handles_are_safe_everywhere() {
    unsafe {
        assert_eq!(cgr_trace_thinking_tokens_used(ptr::null()), 0);
        assert!(cgr_trace_stop_reason(ptr::null()).is_null());
        assert_eq!(cgr_trace_stop_step(ptr::null()), -1);
        assert_eq!(cgr_trace_forced_wait_count(ptr::null()), 0);
        assert_eq!(cgr_trace_probe_count(ptr::null()), 0);
        assert_eq!(cgr_trace_probe_overhead_tokens(ptr::null()), 0);
        assert_eq!(cgr_trace_final_answer(ptr::null()), -1);
        assert_eq!(cgr_trace_final_certainty(ptr::null()), 0.0);
        cgr_backend_free(ptr::null_mut());
        cgr_trace_free(ptr::null_mut());
        cgr_string_free(ptr::null_mut());
    }
}

/// Function names exported from the library source.
fn exported_functions(source: &str) -> BTreeSet<String> {
    source
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|chunk| {
            chunk
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                .collect::<String>()
        })
        .collect()
}

/// Function names declared in the header: every `cgr_`-prefixed
/// identifier directly followed by an opening parenthesis.
fn declared_functions(header: &str) -> BTreeSet<String> {
    let bytes = header.as_bytes();
    let mut names = BTreeSet::new();
    let mut from = 0;
    while let Some(found) = header[from..].find("cgr_") {
        let start = from + found;
        let end = start
            + header[start..]
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                .count();
        let standalone = start == 0
            || !(bytes[start - 1].is_ascii_alphanumeric() || bytes[start - 1] == b'_');
        if standalone && header[end..].trim_start().starts_with('(') {
            names.insert(header[start..end].to_string());
        }
        from = end;
    }
    names
}

/// `pub const CGR_* : <ty> = <value>;` pairs from the library source.
fn exported_constants(source: &str) -> BTreeMap<String, i64> {
    source
        .lines()
        .filter_map(|line| {
            let rest = line.trim().strip_prefix("pub const CGR_")?;
            let (name, tail) = rest.split_once(':')?;
            let (_, value) = tail.split_once('=')?;
            let value = value.trim().trim_end_matches(';').parse().ok()?;
            Some((format!("CGR_{}", name.trim()), value))
        })
        .collect()
}

/// `#define CGR_* <value>` pairs from the header.
fn defined_constants(header: &str) -> BTreeMap<String, i64> {
    header
        .lines()
        .filter_map(|line| {
            let rest = line.trim().strip_prefix("#define CGR_")?;
            let (name, value) = rest.split_once(' ')?;
            Some((format!("CGR_{name}"), value.trim().parse().ok()?))
        })
        .collect()
}

#[test]
fn the_committed_header_matches_the_exported_surface() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let source = std::fs::read_to_string(manifest.join("src/lib.rs")).unwrap();
    let header = std::fs::read_to_string(manifest.join("include/cgr.h")).unwrap();

    let exported = exported_functions(&source);
    let declared = declared_functions(&header);
    assert!(!exported.is_empty(), "the parser found no exported functions");
    assert_eq!(exported, declared, "header prototypes drifted from the exports");

    let constants = exported_constants(&source);
    let defines = defined_constants(&header);
    assert!(constants.len() >= 11, "the parser found too few constants");
    assert_eq!(constants, defines, "header defines drifted from the constants");
}

#[test]
fn the_header_compiles_as_strict_c99() {
    if Command::new("gcc").arg("--version").output().is_err() {
        eprintln!("gcc not found; skipping the header syntax check");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let unit = dir.path().join("check.c");
    std::fs::write(&unit, "#include \"cgr.h\"\nint main(void) { return CGR_STATUS_OK; }\n")
        .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let output = Command::new("gcc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-fsyntax-only"])
        .arg("-I")
        .arg(&include)
        .arg(&unit)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "gcc rejected the header:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}
