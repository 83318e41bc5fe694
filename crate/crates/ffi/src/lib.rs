//! C ABI over the simulator.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`V2xStatus`]
//! and leaves a message for [`v2x_last_error_message`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use v2xsim::mac::TrafficKind;
use v2xsim::report::{self, MatrixResult};
use v2xsim::{ConfigError, Error, SimConfig};

/// Status codes. Config and invariant failures match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V2xStatus {
    Ok = 0,
    Config = 1,
    Invariant = 2,
    Io = 3,
    DataFile = 4,
    InvalidArgument = 5,
    NullPointer = 6,
    Utf8 = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V2xSlice {
    Safety = 0,
    Video = 1,
}

/// Simulation parameters.
pub struct V2xConfig(SimConfig);

/// Metrics of a finished run.
pub struct V2xResult(MatrixResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> V2xStatus {
    match e {
        Error::Config(_) => V2xStatus::Config,
        Error::Invariant(_) => V2xStatus::Invariant,
        Error::DataFile { .. } => V2xStatus::DataFile,
        Error::Io { .. } => V2xStatus::Io,
        Error::InvalidArgument(_) => V2xStatus::InvalidArgument,
        Error::Cell { source, .. } => status_of(source),
    }
}

fn fail(e: Error) -> V2xStatus {
    set_error(e.to_string());
    status_of(&e)
}

/// Run `f`, turning a panic into `V2xStatus::Panic`.
fn guard(f: impl FnOnce() -> V2xStatus) -> V2xStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            V2xStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, V2xStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(V2xStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        V2xStatus::Utf8
    })
}

macro_rules! non_null {
    ($p:expr, $what:literal) => {
        if $p.is_null() {
            set_error(concat!($what, " is null"));
            return V2xStatus::NullPointer;
        }
    };
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn v2x_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn v2x_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// A config holding every default.
#[no_mangle]
pub extern "C" fn v2x_config_new() -> *mut V2xConfig {
    Box::into_raw(Box::new(V2xConfig(SimConfig::default())))
}

/// Parse `key = value` config text into a new handle stored in `*out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2x_config_parse(text: *const c_char, out: *mut *mut V2xConfig) -> V2xStatus {
    guard(|| {
        non_null!(out, "out");
        let text = try_status!(str_arg(text, "text"));
        match SimConfig::parse(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(V2xConfig(c)));
                V2xStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Set one key. `scenario` also resets the gap band to that scenario's.
/// Cross-key validation happens in [`v2x_run`].
///
/// # Safety
/// `config` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn v2x_config_set(config: *mut V2xConfig, key: *const c_char, value: *const c_char) -> V2xStatus {
    guard(|| {
        non_null!(config, "config");
        let key = try_status!(str_arg(key, "key"));
        let value = try_status!(str_arg(value, "value"));
        let c = &mut (*config).0;
        let r = if key == "scenario" {
            value
                .parse::<u8>()
                .map_err(|e| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    reason: e.to_string(),
                })
                .and_then(|s| c.set_scenario(s))
        } else {
            c.set(key, value)
        };
        match r {
            Ok(()) => V2xStatus::Ok,
            Err(e) => fail(e.into()),
        }
    })
}

/// The resolved config as text; release with [`v2x_string_free`].
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn v2x_config_echo(config: *const V2xConfig) -> *mut c_char {
    if config.is_null() {
        set_error("config is null");
        return ptr::null_mut();
    }
    CString::new((*config).0.echo()).map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn v2x_config_free(config: *mut V2xConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run one simulation; on success `*out` receives a result handle.
///
/// # Safety
/// `config` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2x_run(config: *const V2xConfig, out: *mut *mut V2xResult) -> V2xStatus {
    guard(|| {
        non_null!(config, "config");
        non_null!(out, "out");
        let c = &(*config).0;
        let run = c
            .validate()
            .map_err(Error::from)
            .and_then(|()| report::load_tables(c))
            .and_then(|t| report::run_single(c, &t, false));
        match run {
            Ok(r) => {
                *out = Box::into_raw(Box::new(V2xResult(r)));
                V2xStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

unsafe fn cell<'a>(result: *const V2xResult) -> Option<&'a report::CellResult> {
    result.as_ref().and_then(|r| r.0.cells.first())
}

/// Safety packet reception ratio of the run.
///
/// # Safety
/// `result` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2x_result_prr(result: *const V2xResult, out: *mut f64) -> V2xStatus {
    guard(|| {
        non_null!(out, "out");
        let Some(c) = cell(result) else {
            set_error("result is null");
            return V2xStatus::NullPointer;
        };
        match c.metrics.safety_prr() {
            Some(p) => {
                *out = p;
                V2xStatus::Ok
            }
            None => fail(Error::InvalidArgument("run produced no safety packets".into())),
        }
    })
}

/// Fraction of vehicles of `slice` whose throughput reaches `target_kbps`.
///
/// # Safety
/// `result` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2x_result_target_probability(
    result: *const V2xResult,
    slice: V2xSlice,
    target_kbps: f64,
    out: *mut f64,
) -> V2xStatus {
    guard(|| {
        non_null!(out, "out");
        let Some(c) = cell(result) else {
            set_error("result is null");
            return V2xStatus::NullPointer;
        };
        if !(target_kbps.is_finite() && target_kbps >= 0.0) {
            return fail(Error::InvalidArgument(format!("target {target_kbps} kbps")));
        }
        let kind = match slice {
            V2xSlice::Safety => TrafficKind::Safety,
            V2xSlice::Video => TrafficKind::Video,
        };
        *out = c.metrics.target_probability(kind, target_kbps);
        V2xStatus::Ok
    })
}

/// Median number of slice access points over re-slices.
///
/// # Safety
/// `result` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2x_result_median_access_points(result: *const V2xResult, out: *mut f64) -> V2xStatus {
    guard(|| {
        non_null!(out, "out");
        let Some(c) = cell(result) else {
            set_error("result is null");
            return V2xStatus::NullPointer;
        };
        match c.metrics.median_ap_count() {
            Some(m) => {
                *out = m;
                V2xStatus::Ok
            }
            None => fail(Error::InvalidArgument("technology does not use slicing".into())),
        }
    })
}

/// Total bits delivered to end users.
///
/// # Safety
/// `result` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2x_result_delivered_bits(result: *const V2xResult, out: *mut u64) -> V2xStatus {
    guard(|| {
        non_null!(out, "out");
        let Some(c) = cell(result) else {
            set_error("result is null");
            return V2xStatus::NullPointer;
        };
        *out = c.stats.delivered_bits;
        V2xStatus::Ok
    })
}

/// Write the result CSVs and run metadata into `dir`.
///
/// # Safety
/// `result` must come from this library; `dir` must be a NUL-terminated
/// path.
#[no_mangle]
pub unsafe extern "C" fn v2x_result_write(result: *const V2xResult, dir: *const c_char) -> V2xStatus {
    guard(|| {
        non_null!(result, "result");
        let dir = try_status!(str_arg(dir, "dir"));
        match report::write_outputs(Path::new(dir), &(*result).0) {
            Ok(_) => V2xStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `result` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn v2x_result_free(result: *mut V2xResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `s` must be a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn v2x_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
