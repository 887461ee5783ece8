//! C ABI over `arvdm`.
//!
//! Every fallible call returns an [`ArvdmStatus`]; on failure the message is available from
//! [`arvdm_last_error`] on the same thread until the next failing call. Objects are opaque
//! handles released by their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use arvdm::config::{parse_ladder, ExperimentConfig};
use arvdm::decomposition::{decomposition_report, DecompositionReport};
use arvdm::lowerbound;
use arvdm::sampler::{sample_paths, RunConfig};
use arvdm::schedule::{validate, Level, NoiseLadder};
use arvdm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArvdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Schedule = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

pub struct ArvdmLadder(NoiseLadder);

pub struct ArvdmRunConfig(RunConfig);

pub struct ArvdmReport(DecompositionReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ArvdmStatus {
    match e {
        Error::Parse(_) => ArvdmStatus::Parse,
        Error::Io(_) => ArvdmStatus::Io,
        Error::Schedule(_) | Error::Causality { .. } => ArvdmStatus::Schedule,
        Error::InvalidArgument(_) | Error::Config(_) | Error::Dimension { .. } | Error::IndexOutOfRange { .. } => {
            ArvdmStatus::InvalidArgument
        }
        _ => ArvdmStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    Buffer(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ArvdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArvdmStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            ArvdmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Buffer(needed))) => {
            set_error(format!("buffer too small: {needed} entries needed"));
            ArvdmStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            ArvdmStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Parse(format!("{what} is not valid UTF-8"))))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the next failure.
#[no_mangle]
pub extern "C" fn arvdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn arvdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn arvdm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a ladder document (TOML).
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out_ladder` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_ladder_parse(toml: *const c_char, out_ladder: *mut *mut ArvdmLadder) -> ArvdmStatus {
    guard(|| {
        let slot = out(out_ladder, "out_ladder")?;
        let ladder = parse_ladder(text(toml, "toml")?)?;
        *slot = Box::into_raw(Box::new(ArvdmLadder(ladder)));
        Ok(())
    })
}

/// Block ladder with stride `delta` and horizon `horizon_num / horizon_den`. `delta = 1` is
/// FIFO and `delta = w` is outpainting.
///
/// # Safety
/// `out_ladder` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_ladder_block(
    w: usize,
    delta: usize,
    horizon_num: i64,
    horizon_den: i64,
    out_ladder: *mut *mut ArvdmLadder,
) -> ArvdmStatus {
    guard(|| {
        let slot = out(out_ladder, "out_ladder")?;
        let ladder = NoiseLadder::block(w, delta, Level::new(horizon_num, horizon_den)?)?;
        *slot = Box::into_raw(Box::new(ArvdmLadder(ladder)));
        Ok(())
    })
}

/// Number of schedule violations; zero means the ladder is valid.
///
/// # Safety
/// `ladder` must be a live handle; `out_violations` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_ladder_validate(ladder: *const ArvdmLadder, out_violations: *mut usize) -> ArvdmStatus {
    guard(|| {
        let l = handle(ladder, "ladder")?;
        *out(out_violations, "out_violations")? = validate(&l.0).violations.len();
        Ok(())
    })
}

/// Violation lines, newline-separated, as a string to release with [`arvdm_string_free`].
///
/// # Safety
/// `ladder` must be a live handle; `out_text` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_ladder_report(ladder: *const ArvdmLadder, out_text: *mut *mut c_char) -> ArvdmStatus {
    guard(|| {
        let l = handle(ladder, "ladder")?;
        let slot = out(out_text, "out_text")?;
        let lines: Vec<String> = validate(&l.0).violations.iter().map(|v| v.to_string()).collect();
        *slot = CString::new(lines.join("\n")).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// # Safety
/// `ladder` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn arvdm_ladder_free(ladder: *mut ArvdmLadder) {
    if !ladder.is_null() {
        drop(Box::from_raw(ladder));
    }
}

/// Builds a run from an experiment document without sweep axes. Ladder files named by the
/// document are resolved against `base_dir` (null means the current directory).
///
/// # Safety
/// `toml` and non-null `base_dir` must be NUL-terminated strings; `out_config` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_config_parse(
    toml: *const c_char,
    base_dir: *const c_char,
    out_config: *mut *mut ArvdmRunConfig,
) -> ArvdmStatus {
    guard(|| {
        let slot = out(out_config, "out_config")?;
        let base = if base_dir.is_null() { "." } else { text(base_dir, "base_dir")? };
        let cfg = ExperimentConfig::parse(text(toml, "toml")?, Path::new(base))?;
        let mut points = cfg.sweep_points()?;
        if points.len() != 1 {
            return Err(Error::Config("sweeps are not supported through the C interface".into()).into());
        }
        *slot = Box::into_raw(Box::new(ArvdmRunConfig(points.remove(0).run)));
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn arvdm_config_set_seed(config: *mut ArvdmRunConfig, seed: u64) -> ArvdmStatus {
    guard(|| {
        out(config, "config")?.0.seed = seed;
        Ok(())
    })
}

/// Clean video coordinates per path, `K·Δ·d`.
///
/// # Safety
/// `config` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_config_video_len(config: *const ArvdmRunConfig, out_len: *mut usize) -> ArvdmStatus {
    guard(|| {
        let c = handle(config, "config")?;
        *out(out_len, "out_len")? = c.0.video_frames() * c.0.model.frame_dim;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn arvdm_config_free(config: *mut ArvdmRunConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the full decomposition.
///
/// # Safety
/// `config` must be a live handle; `out_report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_decompose(config: *const ArvdmRunConfig, out_report: *mut *mut ArvdmReport) -> ArvdmStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let slot = out(out_report, "out_report")?;
        *slot = Box::into_raw(Box::new(ArvdmReport(decomposition_report(&c.0)?)));
        Ok(())
    })
}

/// Measured KL of the generated video against the true one, in nats.
///
/// # Safety
/// `report` must be a live handle; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_report_measured_kl(report: *const ArvdmReport, out_value: *mut f64) -> ArvdmStatus {
    guard(|| {
        *out(out_value, "out_value")? = handle(report, "report")?.0.measured_joint_kl;
        Ok(())
    })
}

/// Sum of all bound terms and memory-bottleneck values, in nats.
///
/// # Safety
/// `report` must be a live handle; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_report_bound_total(report: *const ArvdmReport, out_value: *mut f64) -> ArvdmStatus {
    guard(|| {
        *out(out_value, "out_value")? = handle(report, "report")?.0.bound_total();
        Ok(())
    })
}

/// Copies the per-step memory-bottleneck values into `buf`. `out_len` always receives the
/// number of steps; a short buffer yields `BufferTooSmall` and copies nothing.
///
/// # Safety
/// `report` must be a live handle; `buf` must hold `buf_len` doubles; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_report_mb(
    report: *const ArvdmReport,
    buf: *mut f64,
    buf_len: usize,
    out_len: *mut usize,
) -> ArvdmStatus {
    guard(|| {
        let mb = &handle(report, "report")?.0.mb;
        *out(out_len, "out_len")? = mb.len();
        copy_into(mb, buf, buf_len)
    })
}

/// Report as JSON, released with [`arvdm_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_report_to_json(report: *const ArvdmReport, out_json: *mut *mut c_char) -> ArvdmStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let slot = out(out_json, "out_json")?;
        *slot = CString::new(r.0.to_json()?).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn arvdm_report_free(report: *mut ArvdmReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

unsafe fn copy_into(src: &[f64], buf: *mut f64, buf_len: usize) -> Result<(), Failure> {
    if src.is_empty() {
        return Ok(());
    }
    if buf_len < src.len() {
        return Err(Failure::Buffer(src.len()));
    }
    if buf.is_null() {
        return Err(Failure::Null("buf"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Monte Carlo draws of the clean video, row-major `n_paths × video_len`.
///
/// # Safety
/// `config` must be a live handle; `buf` must hold `buf_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn arvdm_sample_paths(
    config: *const ArvdmRunConfig,
    n_paths: usize,
    buf: *mut f64,
    buf_len: usize,
) -> ArvdmStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let needed = n_paths * c.0.video_frames() * c.0.model.frame_dim;
        if buf_len < needed {
            return Err(Failure::Buffer(needed));
        }
        let x = sample_paths(&c.0, n_paths)?;
        let row_major: Vec<f64> = (0..x.nrows()).flat_map(|r| x.row(r).iter().copied().collect::<Vec<_>>()).collect();
        copy_into(&row_major, buf, buf_len)
    })
}

/// `ε ∈ [0, ½]` with binary entropy `y` bits.
///
/// # Safety
/// `out_eps` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_binary_entropy_inverse(y: f64, out_eps: *mut f64) -> ArvdmStatus {
    guard(|| {
        *out(out_eps, "out_eps")? = lowerbound::binary_entropy_inverse(y)?;
        Ok(())
    })
}

/// Fraction of plugin-estimator trials whose KL reaches `s²/2`.
///
/// # Safety
/// `out_fraction` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arvdm_minimax_fraction(
    s: f64,
    n: usize,
    trials: usize,
    seed: u64,
    out_fraction: *mut f64,
) -> ArvdmStatus {
    guard(|| {
        *out(out_fraction, "out_fraction")? = lowerbound::minimax_demo(s, n, trials, seed)?.fraction;
        Ok(())
    })
}
