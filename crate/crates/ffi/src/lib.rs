//! C ABI over the `bipartite` estimator.
//!
//! Objects are opaque handles created by `bp_*` constructors and released
//! with the matching `*_free`. Every fallible call returns a [`BpStatus`];
//! on failure the message and module-qualified code of the most recent
//! error on the calling thread are available from [`bp_last_error_message`]
//! and [`bp_last_error_code`]. Strings returned by the library are owned by
//! the caller and released with [`bp_string_free`], except those two, which
//! stay valid until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bipartite::bootstrap::{egocentric_bootstrap, BootstrapConfig, BootstrapResult};
use bipartite::data::{load_dataset, BipartiteDataset, CovariateSchema, DatasetPaths};
use bipartite::exposure::{derive_exposures, ExposureTable};
use bipartite::frame::AnalysisFrame;
use bipartite::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use bipartite::synth::{self, SynthConfig};
use bipartite::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON argument.
    InvalidArgument = 3,
    /// Input data or configuration rejected.
    Validation = 4,
    /// The estimator could not produce a result.
    Estimation = 5,
    /// Index or selector outside the valid range, or result not computed.
    OutOfRange = 6,
    Panic = 7,
}

/// Scalar estimands.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpEstimand {
    Tau = 0,
    Delta0 = 1,
    Delta1 = 2,
}

/// Loaded and validated dataset.
pub struct BpDataset {
    inner: BipartiteDataset,
}

/// Derived key-associated and upwind treatments.
pub struct BpExposures {
    inner: ExposureTable,
}

/// Fitted surface and estimands, with bootstrap intervals when requested.
pub struct BpEstimate {
    output: PipelineOutput,
    n_units: usize,
    intervals: Option<BootstrapResult>,
}

struct LastError {
    message: CString,
    code: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(code: &str, message: &str) {
    let clean = |s: &str| CString::new(s.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(LastError { message: clean(message), code: clean(code) }));
}

fn fail(status: BpStatus, code: &str, message: impl AsRef<str>) -> BpStatus {
    set_error(code, message.as_ref());
    status
}

fn from_error(e: Error) -> BpStatus {
    let status = match e.exit_class() {
        bipartite::error::ExitClass::Validation => BpStatus::Validation,
        bipartite::error::ExitClass::Estimation => BpStatus::Estimation,
    };
    fail(status, &e.code(), e.to_string())
}

fn guard(f: impl FnOnce() -> BpStatus) -> BpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(BpStatus::Panic, "ffi.panic", "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, BpStatus> {
    if p.is_null() {
        return Err(fail(BpStatus::NullPointer, "ffi.null_pointer", format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(BpStatus::InvalidUtf8, "ffi.invalid_utf8", format!("{what} is not UTF-8")))
}

/// Parses an optional JSON argument; null selects the defaults.
unsafe fn json_arg<T: serde::de::DeserializeOwned + Default>(p: *const c_char, what: &str) -> Result<T, BpStatus> {
    if p.is_null() {
        return Ok(T::default());
    }
    let s = str_arg(p, what)?;
    serde_json::from_str(s).map_err(|e| fail(BpStatus::InvalidArgument, "ffi.invalid_json", format!("{what}: {e}")))
}

unsafe fn out_ptr<T>(out: *mut *mut T) -> Result<(), BpStatus> {
    if out.is_null() {
        return Err(fail(BpStatus::NullPointer, "ffi.null_pointer", "output pointer is null"));
    }
    *out = ptr::null_mut();
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, BpStatus> {
    p.as_ref().ok_or_else(|| fail(BpStatus::NullPointer, "ffi.null_pointer", format!("{what} is null")))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null.
#[no_mangle]
pub extern "C" fn bp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.message.as_ptr()))
}

/// Module-qualified code of the last failure on this thread (e.g.
/// `data.negative_weight`), or null.
#[no_mangle]
pub extern "C" fn bp_last_error_code() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.code.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn bp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the three CSV files with a covariate schema given as JSON.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bp_dataset_load(
    interventional_path: *const c_char,
    outcome_path: *const c_char,
    interference_path: *const c_char,
    schema_json: *const c_char,
    out: *mut *mut BpDataset,
) -> BpStatus {
    guard(|| {
        tri!(out_ptr(out));
        let paths = DatasetPaths {
            interventional: PathBuf::from(tri!(str_arg(interventional_path, "interventional_path"))),
            outcome: PathBuf::from(tri!(str_arg(outcome_path, "outcome_path"))),
            interference: PathBuf::from(tri!(str_arg(interference_path, "interference_path"))),
        };
        let schema_text = tri!(str_arg(schema_json, "schema_json"));
        let schema: CovariateSchema = match serde_json::from_str(schema_text) {
            Ok(s) => s,
            Err(e) => return fail(BpStatus::InvalidArgument, "ffi.invalid_json", format!("schema_json: {e}")),
        };
        match load_dataset(&paths, &schema) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(BpDataset { inner: ds }));
                BpStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// Generates a synthetic dataset. `config_json` is a synthetic-design
/// config; null uses the defaults.
///
/// # Safety
/// `config_json` must be null or a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bp_dataset_simulate(config_json: *const c_char, out: *mut *mut BpDataset) -> BpStatus {
    guard(|| {
        tri!(out_ptr(out));
        let cfg: SynthConfig = tri!(json_arg(config_json, "config_json"));
        match synth::generate(&cfg) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(BpDataset { inner: g.dataset }));
                BpStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// # Safety
/// `ds` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn bp_dataset_free(ds: *mut BpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of outcome and interventional units.
///
/// # Safety
/// `ds` must be a live handle; output pointers must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn bp_dataset_dims(ds: *const BpDataset, n_outcome: *mut usize, n_interventional: *mut usize) -> BpStatus {
    guard(|| {
        let ds = tri!(handle(ds, "dataset"));
        if let Some(n) = n_outcome.as_mut() {
            *n = ds.inner.n_outcome();
        }
        if let Some(j) = n_interventional.as_mut() {
            *j = ds.inner.n_interventional();
        }
        BpStatus::Ok
    })
}

/// Derives key-associated and upwind treatments.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bp_exposures_derive(ds: *const BpDataset, out: *mut *mut BpExposures) -> BpStatus {
    guard(|| {
        tri!(out_ptr(out));
        let ds = tri!(handle(ds, "dataset"));
        match derive_exposures(&ds.inner) {
            Ok(ex) => {
                *out = Box::into_raw(Box::new(BpExposures { inner: ex }));
                BpStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// # Safety
/// `ex` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn bp_exposures_free(ex: *mut BpExposures) {
    if !ex.is_null() {
        drop(Box::from_raw(ex));
    }
}

/// Number of outcome units in the table.
///
/// # Safety
/// `ex` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_exposures_len(ex: *const BpExposures, len: *mut usize) -> BpStatus {
    guard(|| {
        let ex = tri!(handle(ex, "exposures"));
        let Some(len) = len.as_mut() else { return fail(BpStatus::NullPointer, "ffi.null_pointer", "len is null") };
        *len = ex.inner.len();
        BpStatus::Ok
    })
}

/// Row `i`: zero-based key-associated unit index, treatment `z` (0 or 1),
/// raw and rescaled upwind treatment. Null output pointers are skipped.
///
/// # Safety
/// `ex` must be a live handle; output pointers must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn bp_exposures_get(
    ex: *const BpExposures,
    i: usize,
    key_associated: *mut usize,
    z: *mut u8,
    g_raw: *mut f64,
    g: *mut f64,
) -> BpStatus {
    guard(|| {
        let ex = &tri!(handle(ex, "exposures")).inner;
        if i >= ex.len() {
            return fail(BpStatus::OutOfRange, "ffi.out_of_range", format!("row {i} of {}", ex.len()));
        }
        if let Some(p) = key_associated.as_mut() {
            *p = ex.key_associated[i];
        }
        if let Some(p) = z.as_mut() {
            *p = u8::from(ex.z[i]);
        }
        if let Some(p) = g_raw.as_mut() {
            *p = ex.g_raw[i];
        }
        if let Some(p) = g.as_mut() {
            *p = ex.g[i];
        }
        BpStatus::Ok
    })
}

fn prepare(ds: &BipartiteDataset) -> Result<AnalysisFrame, BpStatus> {
    let ex = derive_exposures(ds).map_err(|e| from_error(e.into()))?;
    AnalysisFrame::build(ds, &ex).map_err(|e| from_error(e.into()))
}

/// Runs the estimator. `config_json` holds pipeline settings
/// (`{"propensity": {...}, "grid": {...}}`); null uses the defaults.
///
/// # Safety
/// `ds` must be a live handle, `config_json` null or a valid string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_estimate_fit(ds: *const BpDataset, config_json: *const c_char, out: *mut *mut BpEstimate) -> BpStatus {
    guard(|| {
        tri!(out_ptr(out));
        let ds = tri!(handle(ds, "dataset"));
        let cfg: PipelineConfig = tri!(json_arg(config_json, "config_json"));
        let frame = tri!(prepare(&ds.inner));
        match run_pipeline(&frame, &cfg) {
            Ok(output) => {
                *out = Box::into_raw(Box::new(BpEstimate { output, n_units: frame.len(), intervals: None }));
                BpStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// Runs the estimator with egocentric bootstrap intervals. Results depend
/// on `seed` but not on `jobs`.
///
/// # Safety
/// `ds` must be a live handle, `config_json` null or a valid string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_estimate_bootstrap(
    ds: *const BpDataset,
    config_json: *const c_char,
    replicates: usize,
    seed: u64,
    ci_level: f64,
    jobs: usize,
    out: *mut *mut BpEstimate,
) -> BpStatus {
    guard(|| {
        tri!(out_ptr(out));
        let ds = tri!(handle(ds, "dataset"));
        let cfg: PipelineConfig = tri!(json_arg(config_json, "config_json"));
        let frame = tri!(prepare(&ds.inner));
        let bc = BootstrapConfig { replicates, seed, ci_level, jobs, ..Default::default() };
        match egocentric_bootstrap(&frame, &cfg, &bc) {
            Ok((output, b)) => {
                *out = Box::into_raw(Box::new(BpEstimate { output, n_units: frame.len(), intervals: Some(b) }));
                BpStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// # Safety
/// `est` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn bp_estimate_free(est: *mut BpEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Point estimate of a scalar estimand.
///
/// # Safety
/// `est` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_estimate_value(est: *const BpEstimate, which: BpEstimand, value: *mut f64) -> BpStatus {
    guard(|| {
        let est = tri!(handle(est, "estimate"));
        let Some(value) = value.as_mut() else { return fail(BpStatus::NullPointer, "ffi.null_pointer", "value is null") };
        let e = &est.output.estimates;
        *value = match which {
            BpEstimand::Tau => e.tau,
            BpEstimand::Delta0 => e.delta0,
            BpEstimand::Delta1 => e.delta1,
        };
        BpStatus::Ok
    })
}

/// Percentile interval of a scalar estimand; `OutOfRange` when the
/// estimate was fitted without a bootstrap.
///
/// # Safety
/// `est` must be a live handle; `lo` and `hi` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_estimate_interval(est: *const BpEstimate, which: BpEstimand, lo: *mut f64, hi: *mut f64) -> BpStatus {
    guard(|| {
        let est = tri!(handle(est, "estimate"));
        let Some(b) = &est.intervals else { return fail(BpStatus::OutOfRange, "ffi.no_intervals", "estimate has no bootstrap intervals") };
        let (Some(lo), Some(hi)) = (lo.as_mut(), hi.as_mut()) else {
            return fail(BpStatus::NullPointer, "ffi.null_pointer", "interval output is null");
        };
        let iv = match which {
            BpEstimand::Tau => &b.tau,
            BpEstimand::Delta0 => &b.delta0,
            BpEstimand::Delta1 => &b.delta1,
        };
        *lo = iv.lo;
        *hi = iv.hi;
        BpStatus::Ok
    })
}

/// Number of grid points of the dose-response curves.
///
/// # Safety
/// `est` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_estimate_grid_len(est: *const BpEstimate, len: *mut usize) -> BpStatus {
    guard(|| {
        let est = tri!(handle(est, "estimate"));
        let Some(len) = len.as_mut() else { return fail(BpStatus::NullPointer, "ffi.null_pointer", "len is null") };
        *len = est.output.surface.g_grid.len();
        BpStatus::Ok
    })
}

/// Copies the grid and the pooled curve `mu(z, .)` into caller buffers of
/// length `len`, which must equal the grid length. `grid` may be null.
///
/// # Safety
/// `est` must be a live handle; buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bp_estimate_curve(est: *const BpEstimate, z: u8, grid: *mut f64, mu: *mut f64, len: usize) -> BpStatus {
    guard(|| {
        let est = tri!(handle(est, "estimate"));
        let s = &est.output.surface;
        if z > 1 || len != s.g_grid.len() {
            return fail(BpStatus::OutOfRange, "ffi.out_of_range", format!("z = {z}, len = {len}, grid has {}", s.g_grid.len()));
        }
        if mu.is_null() {
            return fail(BpStatus::NullPointer, "ffi.null_pointer", "mu is null");
        }
        std::slice::from_raw_parts_mut(mu, len).copy_from_slice(&s.pooled[usize::from(z)]);
        if !grid.is_null() {
            std::slice::from_raw_parts_mut(grid, len).copy_from_slice(&s.g_grid);
        }
        BpStatus::Ok
    })
}

/// Estimands as JSON (the CLI's `estimands.json` layout). Release with
/// [`bp_string_free`].
///
/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_estimate_to_json(est: *const BpEstimate, out: *mut *mut c_char) -> BpStatus {
    guard(|| {
        tri!(out_ptr(out));
        let est = tri!(handle(est, "estimate"));
        let record = bipartite::cli::EstimandsRecord::new(&est.output, est.n_units);
        match serde_json::to_string(&record) {
            Ok(s) => {
                *out = CString::new(s).unwrap_or_default().into_raw();
                BpStatus::Ok
            }
            Err(e) => fail(BpStatus::Estimation, "ffi.serialize", e.to_string()),
        }
    })
}
