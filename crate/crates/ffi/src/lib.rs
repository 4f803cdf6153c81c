//! C ABI over the `heat-recon` driver.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns an [`HrStatus`]; the message
//! of the last failure on the calling thread is available through
//! [`hr_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use heat_recon::config::ExperimentConfig;
use heat_recon::experiment::{build_problem, build_truth, reconstruct, reconstruction_rows, run_experiment, summarize};
use heat_recon::{Error, ErrorCategory};

/// Result of an FFI call. Config, io and solver failures use the same codes
/// as the command line exit status.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or a buffer that is too small.
    InvalidArgument = 1,
    Config = 2,
    Io = 3,
    Solver = 4,
    /// A Rust panic was caught; the handle involved should be freed.
    Panic = 5,
}

/// Opaque experiment configuration.
pub struct HrConfig {
    inner: ExperimentConfig,
}

/// Opaque result of an in-memory reconstruction.
pub struct HrRun {
    summary: HrSummary,
    columns: Vec<CString>,
    /// Row-major, `columns.len()` values per row.
    values: Vec<f64>,
}

/// Scalar outcome of a reconstruction. NaN marks a quantity that is not
/// defined for the formulation (e.g. `flux_residual` for second order).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrSummary {
    pub nx: usize,
    pub nt: usize,
    pub h: f64,
    pub misfit: f64,
    pub cost: f64,
    pub observed_norm: f64,
    pub equation_residual: f64,
    pub flux_residual: f64,
    pub multiplier_norm: f64,
    pub weighted_error: f64,
    pub l2_error: f64,
    pub delta_h: f64,
    pub iterations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> HrStatus {
    match e.category() {
        ErrorCategory::Config => HrStatus::Config,
        ErrorCategory::Io => HrStatus::Io,
        ErrorCategory::Solver => HrStatus::Solver,
    }
}

struct Fail(HrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        Fail(status_of(&e), e.to_string())
    }
}

fn arg(msg: &str) -> Fail {
    Fail(HrStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, recording failures and catching panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            HrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(arg(&format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| arg(&format!("{what} is not valid UTF-8")))
}

unsafe fn cfg_ref<'a>(cfg: *const HrConfig) -> Result<&'a HrConfig, Fail> {
    cfg.as_ref().ok_or_else(|| arg("config handle is null"))
}

unsafe fn cfg_mut<'a>(cfg: *mut HrConfig) -> Result<&'a mut HrConfig, Fail> {
    cfg.as_mut().ok_or_else(|| arg("config handle is null"))
}

unsafe fn run_ref<'a>(run: *const HrRun) -> Result<&'a HrRun, Fail> {
    run.as_ref().ok_or_else(|| arg("run handle is null"))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(arg("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Bytes needed to hold the last error message including the NUL, or 0 when
/// the last call on this thread succeeded.
#[no_mangle]
pub extern "C" fn hr_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes_with_nul().len()))
}

/// Copies the last error message into `buf`. Returns the number of bytes
/// written including the NUL, 0 when there is no error, or -1 when `buf` is
/// null or shorter than [`hr_last_error_length`].
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hr_last_error_message(buf: *mut c_char, len: usize) -> isize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(s) = e.as_ref() else { return 0 };
        let bytes = s.as_bytes_with_nul();
        if buf.is_null() || len < bytes.len() {
            return -1;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        bytes.len() as isize
    })
}

/// Default configuration (16 x 16 grid, unit weights, `mf`).
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn hr_config_default(out: *mut *mut HrConfig) -> HrStatus {
    guard(|| put(out, HrConfig { inner: ExperimentConfig::default() }))
}

/// Parses sectioned `key = value` config text and validates it.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hr_config_parse(text: *const c_char, out: *mut *mut HrConfig) -> HrStatus {
    guard(|| {
        let cfg: ExperimentConfig = str_arg(text, "config text")?.parse()?;
        cfg.validate()?;
        put(out, HrConfig { inner: cfg })
    })
}

/// Reads and validates a config file (run manifests are accepted).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hr_config_load(path: *const c_char, out: *mut *mut HrConfig) -> HrStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_file(Path::new(str_arg(path, "config path")?))?;
        cfg.validate()?;
        put(out, HrConfig { inner: cfg })
    })
}

/// Canonical text of the configuration. The returned string is owned by the
/// caller and released with [`hr_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hr_config_to_text(cfg: *const HrConfig, out: *mut *mut c_char) -> HrStatus {
    guard(|| {
        let text = cfg_ref(cfg)?.inner.to_text()?;
        if out.is_null() {
            return Err(arg("output pointer is null"));
        }
        *out = CString::new(text).map_err(|_| arg("config text contains NUL"))?.into_raw();
        Ok(())
    })
}

/// Sets the grid size; validated on the next run.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_config_set_grid(cfg: *mut HrConfig, nx: usize, nt: usize) -> HrStatus {
    guard(|| {
        let c = cfg_mut(cfg)?;
        c.inner.grid.nx = nx;
        c.inner.grid.nt = nt;
        Ok(())
    })
}

/// Sets the observation noise level and seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_config_set_noise(cfg: *mut HrConfig, sigma: f64, seed: u64) -> HrStatus {
    guard(|| {
        let c = cfg_mut(cfg)?;
        c.inner.observation.sigma = sigma;
        c.inner.observation.seed = seed;
        Ok(())
    })
}

/// Releases a config handle. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_config_free(cfg: *mut HrConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn run_in_memory(cfg: &ExperimentConfig) -> Result<HrRun, Fail> {
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    let truth = build_truth(cfg, &grid)?;
    let pb = build_problem(cfg, &truth)?;
    let rec = reconstruct(cfg, &pb)?;
    let s = summarize(cfg, &pb, &rec, &truth)?;
    let (header, rows) = reconstruction_rows(&pb, &rec.report)?;
    let columns = header.iter().map(|h| CString::new(*h).expect("column names have no NUL")).collect();
    Ok(HrRun {
        summary: HrSummary {
            nx: s.nx,
            nt: s.nt,
            h: s.h,
            misfit: s.misfit,
            cost: s.cost,
            observed_norm: s.observed_norm,
            equation_residual: s.equation_residual,
            flux_residual: s.flux_residual,
            multiplier_norm: s.multiplier_norm,
            weighted_error: s.weighted_error,
            l2_error: s.l2_error,
            delta_h: s.delta_h,
            iterations: s.iterations,
        },
        columns,
        values: rows.into_iter().flatten().collect(),
    })
}

/// Synthesizes the observation and reconstructs without touching the disk.
///
/// # Safety
/// `cfg` must be a live handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hr_reconstruct(cfg: *const HrConfig, out: *mut *mut HrRun) -> HrStatus {
    guard(|| {
        let run = run_in_memory(&cfg_ref(cfg)?.inner)?;
        put(out, run)
    })
}

/// Full pipeline writing the same artifacts as `heat-recon reconstruct` into
/// `out_dir`.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hr_run_experiment(cfg: *const HrConfig, out_dir: *const c_char) -> HrStatus {
    guard(|| {
        let c = cfg_ref(cfg)?;
        let dir = str_arg(out_dir, "output directory")?;
        run_experiment(&c.inner, Path::new(dir))?;
        Ok(())
    })
}

/// Copies the scalar summary into `out`.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hr_run_summary(run: *const HrRun, out: *mut HrSummary) -> HrStatus {
    guard(|| {
        let r = run_ref(run)?;
        let out = out.as_mut().ok_or_else(|| arg("output pointer is null"))?;
        *out = r.summary;
        Ok(())
    })
}

/// Number of cell-center rows in the reconstructed field, 0 for null.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_run_rows(run: *const HrRun) -> usize {
    run.as_ref().map_or(0, |r| if r.columns.is_empty() { 0 } else { r.values.len() / r.columns.len() })
}

/// Number of columns: 4 (`x, t, y, lambda`) or 6 (`x, t, y, p, lambda, mu`).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_run_columns(run: *const HrRun) -> usize {
    run.as_ref().map_or(0, |r| r.columns.len())
}

/// Name of column `k`, borrowed from the handle; null when out of range.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_run_column_name(run: *const HrRun, k: usize) -> *const c_char {
    run.as_ref().and_then(|r| r.columns.get(k)).map_or(ptr::null(), |s| s.as_ptr())
}

/// Copies the field row-major into `buf`, which must hold
/// `rows * columns` doubles.
///
/// # Safety
/// `run` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hr_run_values(run: *const HrRun, buf: *mut f64, len: usize) -> HrStatus {
    guard(|| {
        let r = run_ref(run)?;
        if buf.is_null() || len < r.values.len() {
            return Err(arg(&format!("buffer holds {len} values, {} needed", r.values.len())));
        }
        ptr::copy_nonoverlapping(r.values.as_ptr(), buf, r.values.len());
        Ok(())
    })
}

/// Releases a run handle. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_run_free(run: *mut HrRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
