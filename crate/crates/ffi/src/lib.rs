//! C ABI over the sicdd library.
//!
//! Configurations live behind opaque handles. Every entry point returns a
//! [`SicddStatus`]; on failure [`sicdd_last_error`] describes the problem.
//! Strings handed out by the library are released with
//! [`sicdd_string_free`], handles with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sicdd::experiment::{self, ExperimentConfig, RATES_SCHEMA};
use sicdd::link::{derive_taps, Link};
use sicdd::modem::{build_alphabet, AlphabetKind};
use sicdd::polar::{self, FER_SCHEMA};
use sicdd::Error;

/// Result codes of every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SicddStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    /// Rejected configuration or input data.
    InvalidConfig = 2,
    /// Resource limits or numerical failure during a run.
    Runtime = 3,
    /// The library panicked; the handle involved should be dropped.
    Panic = 4,
}

/// Opaque experiment configuration.
pub struct SicddConfig {
    inner: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> SicddStatus {
    match err.exit_code() {
        3 => SicddStatus::Runtime,
        _ => SicddStatus::InvalidConfig,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (SicddStatus, String)>>(f: F) -> SicddStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SicddStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SicddStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SicddStatus, String) {
    (status_of(&e), e.to_string())
}

fn arg_err(msg: &str) -> (SicddStatus, String) {
    (SicddStatus::InvalidArgument, msg.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SicddStatus, String)> {
    if p.is_null() {
        return Err(arg_err(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| arg_err(&format!("{what} is not UTF-8")))
}

unsafe fn config_ref<'a>(cfg: *const SicddConfig) -> Result<&'a SicddConfig, (SicddStatus, String)> {
    cfg.as_ref().ok_or_else(|| arg_err("config handle is null"))
}

unsafe fn hand_out_string(text: String, out: *mut *mut c_char) -> Result<(), (SicddStatus, String)> {
    let c = CString::new(text).map_err(|_| arg_err("output contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

fn csv_text<T: serde::Serialize>(schema: &str, rows: &[T]) -> Result<String, (SicddStatus, String)> {
    let mut buf = Vec::new();
    experiment::write_csv(&mut buf, schema, rows).map_err(lib_err)?;
    String::from_utf8(buf).map_err(|_| arg_err("non-UTF-8 output"))
}

/// Message of the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sicdd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sicdd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a configuration from a built-in preset name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sicdd_config_from_preset(name: *const c_char, out: *mut *mut SicddConfig) -> SicddStatus {
    guard(|| {
        if out.is_null() {
            return Err(arg_err("out is null"));
        }
        let inner = experiment::preset(read_str(name, "name")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SicddConfig { inner }));
        Ok(())
    })
}

/// Creates a configuration from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sicdd_config_from_toml(toml: *const c_char, out: *mut *mut SicddConfig) -> SicddStatus {
    guard(|| {
        if out.is_null() {
            return Err(arg_err("out is null"));
        }
        let inner = ExperimentConfig::from_toml(read_str(toml, "toml")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SicddConfig { inner }));
        Ok(())
    })
}

/// Serializes a configuration as TOML into a new string.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sicdd_config_to_toml(cfg: *const SicddConfig, out: *mut *mut c_char) -> SicddStatus {
    guard(|| {
        let c = config_ref(cfg)?;
        if out.is_null() {
            return Err(arg_err("out is null"));
        }
        hand_out_string(c.inner.to_toml(), out)
    })
}

/// Sets the master seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sicdd_config_set_seed(cfg: *mut SicddConfig, seed: u64) -> SicddStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| arg_err("config handle is null"))?;
        c.inner.seed = seed;
        Ok(())
    })
}

/// Sets the SNR sweep; `step` must be positive and `stop >= start`.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sicdd_config_set_snr(cfg: *mut SicddConfig, start_db: f64, stop_db: f64, step_db: f64) -> SicddStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| arg_err("config handle is null"))?;
        let mut next = c.inner.clone();
        next.snr = experiment::SnrSweep { start: start_db, stop: stop_db, step: step_db };
        next.validate().map_err(lib_err)?;
        c.inner = next;
        Ok(())
    })
}

/// Sets the frame length and frames per SNR point.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sicdd_config_set_frames(cfg: *mut SicddConfig, symbols: usize, frames: usize) -> SicddStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| arg_err("config handle is null"))?;
        let mut next = c.inner.clone();
        next.n = symbols;
        next.frames = frames;
        next.validate().map_err(lib_err)?;
        c.inner = next;
        Ok(())
    })
}

/// Releases a configuration; null is ignored.
///
/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sicdd_config_free(cfg: *mut SicddConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the rate sweep and returns the rates CSV.
///
/// # Safety
/// `cfg` must be a live handle and `out_csv` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sicdd_run_rates(cfg: *const SicddConfig, out_csv: *mut *mut c_char) -> SicddStatus {
    guard(|| {
        let c = config_ref(cfg)?;
        if out_csv.is_null() {
            return Err(arg_err("out_csv is null"));
        }
        let points = experiment::run_rates(&c.inner).map_err(lib_err)?;
        let rows = experiment::rate_rows(&c.inner, &points).map_err(lib_err)?;
        hand_out_string(csv_text(RATES_SCHEMA, &rows)?, out_csv)
    })
}

/// Designs polar codes, runs the FER sweep and returns the FER CSV.
///
/// # Safety
/// `cfg` must be a live handle and `out_csv` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sicdd_run_fer(cfg: *const SicddConfig, out_csv: *mut *mut c_char) -> SicddStatus {
    guard(|| {
        let c = config_ref(cfg)?;
        if out_csv.is_null() {
            return Err(arg_err("out_csv is null"));
        }
        let (_, rows) = polar::run_fer(&c.inner).map_err(lib_err)?;
        hand_out_string(csv_text(FER_SCHEMA, &rows)?, out_csv)
    })
}

/// Derives the channel taps of the configured link as CSV
/// (index, re, im).
///
/// # Safety
/// `cfg` must be a live handle and `out_csv` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sicdd_taps_csv(cfg: *const SicddConfig, out_csv: *mut *mut c_char) -> SicddStatus {
    guard(|| {
        let c = config_ref(cfg)?;
        if out_csv.is_null() {
            return Err(arg_err("out_csv is null"));
        }
        let taps = derive_taps(&c.inner.link).map_err(lib_err)?;
        let mut buf = Vec::new();
        taps.write_csv(&mut buf).map_err(lib_err)?;
        hand_out_string(String::from_utf8(buf).map_err(|_| arg_err("non-UTF-8 output"))?, out_csv)
    })
}

/// Transmit power per symbol of the configured link and alphabet at
/// unit amplitude, in normalized units.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sicdd_unit_power(cfg: *const SicddConfig, out: *mut f64) -> SicddStatus {
    guard(|| {
        let c = config_ref(cfg)?;
        if out.is_null() {
            return Err(arg_err("out is null"));
        }
        let link = Link::new(c.inner.link.clone()).map_err(lib_err)?;
        let alphabet = c.inner.build_alphabet().map_err(lib_err)?;
        *out = link.unit_power(&alphabet);
        Ok(())
    })
}

/// Writes the points of an alphabet: `kind` is 0 for PAM, 1 for ASK and
/// 2 for SQAM. `re` and `im` must each hold `capacity` values; `len`
/// receives the alphabet size.
///
/// # Safety
/// `re`, `im` must be valid for `capacity` writes and `len` valid.
#[no_mangle]
pub unsafe extern "C" fn sicdd_alphabet_points(kind: u32, size: usize, re: *mut f64, im: *mut f64, capacity: usize, len: *mut usize) -> SicddStatus {
    guard(|| {
        if re.is_null() || im.is_null() || len.is_null() {
            return Err(arg_err("output pointer is null"));
        }
        let kind = match kind {
            0 => AlphabetKind::Pam,
            1 => AlphabetKind::Ask,
            2 => AlphabetKind::Sqam,
            _ => return Err(arg_err("unknown alphabet kind")),
        };
        let a = build_alphabet(kind, size).map_err(lib_err)?;
        *len = a.len();
        if capacity < a.len() {
            return Err(arg_err("buffer too small"));
        }
        for (i, p) in a.points().iter().enumerate() {
            *re.add(i) = p.re;
            *im.add(i) = p.im;
        }
        Ok(())
    })
}

/// Releases a string returned by the library; null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sicdd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

