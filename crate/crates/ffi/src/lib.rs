//! C interface to the `dina` estimator.
//!
//! Datasets and fits are opaque handles created by `dina_*_new`/`dina_fit`
//! and released with the matching `_free`. Every fallible call returns a
//! [`DinaStatus`]; on failure `dina_last_error()` describes the error for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use dina::evaluation::bootstrap_ci;
use dina::experiment::{fit_spec, MethodSpec};
use dina::io::read_dataset;
use dina::learners::LearnerSpec;
use dina::{Dataset, DinaError, Family, Matrix};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DinaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    /// Solver failure: no convergence, separation, rank deficiency.
    Numerical = 4,
    Unsupported = 5,
    Io = 6,
    Bootstrap = 7,
    Panic = 8,
}

/// Opaque dataset handle.
pub struct DinaDataset(Dataset);

/// Opaque fitted-model handle.
pub struct DinaFit(dina::dina::DinaFit);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &DinaError) -> DinaStatus {
    use DinaError::*;
    match e {
        UnsupportedFamily { .. } => DinaStatus::Unsupported,
        Parse { .. } | MissingColumn(_) | Config(_) => DinaStatus::Parse,
        RankDeficient { .. } | Separation { .. } | NoConvergence { .. } | NoEvents | Quadrature { .. } => {
            DinaStatus::Numerical
        }
        Fold { source, .. } => status_of(source),
        Bootstrap(_) => DinaStatus::Bootstrap,
        Io(_) => DinaStatus::Io,
        _ => DinaStatus::InvalidArgument,
    }
}

struct Failure(DinaStatus, String);

impl From<DinaError> for Failure {
    fn from(e: DinaError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DinaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DinaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DinaStatus::Ok
        }
        Ok(Err(Failure(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            DinaStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(DinaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn learner(p: *const c_char, what: &str) -> Result<LearnerSpec, Failure> {
    if p.is_null() {
        return Ok(LearnerSpec::Glm);
    }
    Ok(LearnerSpec::parse(text(p, what)?)?)
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    (!p.is_null()).then(|| slice::from_raw_parts_mut(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dina_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn dina_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a dataset from row-major `x` (`n × d`), arms `w`, responses `y`
/// and, for Cox families, event indicators `delta` (may be null otherwise).
/// `family` uses the CLI syntax, e.g. `"poisson"` or `"cox-full"`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dina_dataset_new(
    family: *const c_char,
    n: usize,
    d: usize,
    x: *const f64,
    w: *const u32,
    y: *const f64,
    delta: *const u8,
    n_arms: usize,
    out: *mut *mut DinaDataset,
) -> DinaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let family = Family::parse(text(family, "family")?)?;
        if x.is_null() || w.is_null() || y.is_null() {
            return Err(null("x, w or y"));
        }
        let xm = Matrix::new(n, d, slice::from_raw_parts(x, n * d).to_vec())?;
        let w = slice::from_raw_parts(w, n).iter().map(|&v| v as usize).collect();
        let y = slice::from_raw_parts(y, n).to_vec();
        let delta = (!delta.is_null()).then(|| slice::from_raw_parts(delta, n).to_vec());
        let data = Dataset::new(family, xm, w, y, delta, n_arms)?;
        *out = Box::into_raw(Box::new(DinaDataset(data)));
        Ok(())
    })
}

/// Reads a dataset CSV (`x1..xd, w, y[, delta]`). `n_arms = 0` infers it from `w`.
///
/// # Safety
/// `path` and `family` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dina_dataset_read_csv(
    path: *const c_char,
    family: *const c_char,
    n_arms: usize,
    out: *mut *mut DinaDataset,
) -> DinaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = text(path, "path")?;
        let family = Family::parse(text(family, "family")?)?;
        let file = File::open(path).map_err(|e| Failure(DinaStatus::Io, format!("{path}: {e}")))?;
        let data = read_dataset(file, &family, (n_arms > 0).then_some(n_arms))?;
        *out = Box::into_raw(Box::new(DinaDataset(data)));
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle from `dina_dataset_new`/`dina_dataset_read_csv`.
#[no_mangle]
pub unsafe extern "C" fn dina_dataset_free(data: *mut DinaDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Rows of `data`, or 0 for null.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dina_dataset_rows(data: *const DinaDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n())
}

/// Covariates of `data`, or 0 for null.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dina_dataset_covariates(data: *const DinaDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.d())
}

/// Fits `method` (`"dina"`, `"e"`, `"se"`, `"x"`, `"pax"`, optionally with
/// `-partial`). Null learners mean `"glm"`.
///
/// # Safety
/// `data` must be a live dataset handle, strings NUL-terminated or null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dina_fit(
    data: *const DinaDataset,
    method: *const c_char,
    propensity_learner: *const c_char,
    outcome_learner: *const c_char,
    seed: u64,
    out: *mut *mut DinaFit,
) -> DinaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        let method = MethodSpec::parse(text(method, "method")?)?;
        let p = learner(propensity_learner, "propensity_learner")?;
        let o = learner(outcome_learner, "outcome_learner")?;
        let fit = fit_spec(method, &data.0, &p, &o, seed)?;
        *out = Box::into_raw(Box::new(DinaFit(fit)));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from `dina_fit`.
#[no_mangle]
pub unsafe extern "C" fn dina_fit_free(fit: *mut DinaFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of coefficients, `(K − 1)(1 + d)`; 0 for null.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn dina_fit_coefficients(fit: *const DinaFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.beta.len())
}

/// Copies the coefficients into `buf`, which holds `len` values.
///
/// # Safety
/// `fit` must be a live fit handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dina_fit_coef(fit: *const DinaFit, buf: *mut f64, len: usize) -> DinaStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        let beta = &fit.0.beta;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < beta.len() {
            return Err(Failure(DinaStatus::InvalidArgument, format!("buffer holds {len}, need {}", beta.len())));
        }
        slice::from_raw_parts_mut(buf, beta.len()).copy_from_slice(beta);
        Ok(())
    })
}

/// `τ̂(x)` of the first treated arm at the `d` covariates in `x`.
///
/// # Safety
/// `fit` must be a live fit handle, `x` valid for `d` reads, `tau` writable.
#[no_mangle]
pub unsafe extern "C" fn dina_fit_tau(fit: *const DinaFit, x: *const f64, d: usize, tau: *mut f64) -> DinaStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if x.is_null() || tau.is_null() {
            return Err(null("x or tau"));
        }
        let v = dina::dina::tau_at(&fit.0, slice::from_raw_parts(x, d))?;
        *tau = v[0];
        Ok(())
    })
}

/// Bootstrap standard errors and normal-type intervals at `level` from `b`
/// resamples. Each output array must hold `len` values; any may be null.
///
/// # Safety
/// `data` must be a live dataset handle, strings NUL-terminated or null, and
/// every non-null output valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dina_bootstrap(
    data: *const DinaDataset,
    method: *const c_char,
    propensity_learner: *const c_char,
    outcome_learner: *const c_char,
    b: usize,
    level: f64,
    seed: u64,
    estimate: *mut f64,
    se: *mut f64,
    ci_lo: *mut f64,
    ci_hi: *mut f64,
    len: usize,
) -> DinaStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        let method = MethodSpec::parse(text(method, "method")?)?;
        let p = learner(propensity_learner, "propensity_learner")?;
        let o = learner(outcome_learner, "outcome_learner")?;
        let res = bootstrap_ci(&data.0, |d| fit_spec(method, d, &p, &o, seed).map(|f| f.beta), b, level, seed)?;
        let k = res.estimate.len();
        if len < k {
            return Err(Failure(DinaStatus::InvalidArgument, format!("buffers hold {len}, need {k}")));
        }
        for (dst, src) in [(estimate, &res.estimate), (se, &res.se), (ci_lo, &res.ci_lo), (ci_hi, &res.ci_hi)] {
            if let Some(s) = out_slice(dst, k) {
                s.copy_from_slice(src);
            }
        }
        Ok(())
    })
}
