//! C ABI over `rkhs-control`.
//!
//! Every fallible call returns an [`RkcStatus`]; on failure the message is
//! kept per thread and can be read with [`rkc_last_error`]. Models are opaque
//! handles released with [`rkc_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rkhs_control::data::{heston_fft_price, FftSettings, HestonParams};
use rkhs_control::experiment::{run_experiment, ExperimentConfig, SavedModel};
use rkhs_control::optimize::Model;
use rkhs_control::rkhs::Points;
use rkhs_control::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Input = 3,
    Schema = 4,
    Config = 5,
    Divergence = 6,
    Fitting = 7,
    Pricing = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for RkcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Input(_) | Error::DimensionMismatch { .. } => RkcStatus::Input,
            Error::Schema(_) => RkcStatus::Schema,
            Error::Config(_) => RkcStatus::Config,
            Error::Divergence { .. } => RkcStatus::Divergence,
            Error::Fitting { .. } => RkcStatus::Fitting,
            Error::Pricing { .. } => RkcStatus::Pricing,
            Error::Io { .. } => RkcStatus::Io,
        }
    }
}

/// A loaded model together with its feature scaling.
pub struct RkcModel {
    saved: SavedModel,
    model: Model,
}

/// Test metrics of a run; entries that do not apply to the task are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RkcMetrics {
    pub rmse: f64,
    pub mape: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub naive_cost: f64,
    pub test_cost: f64,
    pub iterations: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RkcHestonParams {
    pub spot: f64,
    pub strike: f64,
    pub maturity: f64,
    pub rate: f64,
    pub kappa: f64,
    pub theta: f64,
    pub rho: f64,
    pub sigma: f64,
    pub v0: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(RkcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(RkcStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RkcStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RkcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RkcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RkcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(RkcStatus::InvalidString, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn rkc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rkc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file written by a run.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rkc_model_load(path: *const c_char, out: *mut *mut RkcModel) -> RkcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path, "path") }?;
        let saved = SavedModel::load(&path)?;
        let model = saved.build()?;
        unsafe { *out = Box::into_raw(Box::new(RkcModel { saved, model })) };
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`rkc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rkc_model_free(model: *mut RkcModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Input dimension of the model.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rkc_model_dim(model: *const RkcModel, out: *mut usize) -> RkcStatus {
    guard(|| {
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = model.model.dim() };
        Ok(())
    })
}

/// Prediction at `n` points stored row-major in `xs` (`n * dim` values, in
/// the original feature units).
///
/// # Safety
/// `xs` must hold `n * dim` values and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn rkc_model_predict_batch(
    model: *const RkcModel,
    xs: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
) -> RkcStatus {
    guard(|| {
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if xs.is_null() {
            return Err(null("xs"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Failure(RkcStatus::Input, "n * dim overflows".into()))?;
        let data = unsafe { std::slice::from_raw_parts(xs, len) }.to_vec();
        let points = Points::new(dim, data)?;
        if points.dim() != model.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.model.dim(),
                got: dim,
            }
            .into());
        }
        let preds = model.saved.predict_raw(&model.model, &points)?;
        unsafe { std::slice::from_raw_parts_mut(out, n) }.copy_from_slice(preds.as_slice());
        Ok(())
    })
}

/// Prediction at a single point of length `dim`.
///
/// # Safety
/// `x` must hold `dim` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rkc_model_predict(
    model: *const RkcModel,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> RkcStatus {
    unsafe { rkc_model_predict_batch(model, x, 1, dim, out) }
}

/// Runs the experiment described by a config file and writes its artifacts.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn rkc_run_experiment(config_path: *const c_char, out: *mut RkcMetrics) -> RkcStatus {
    guard(|| {
        let path = unsafe { path_arg(config_path, "config_path") }?;
        let cfg = ExperimentConfig::load(&path)?;
        let report = run_experiment(&cfg)?;
        if let Some(out) = unsafe { out.as_mut() } {
            *out = RkcMetrics {
                rmse: report.rmse.unwrap_or(f64::NAN),
                mape: report.mape.unwrap_or(f64::NAN),
                accuracy: report.accuracy.unwrap_or(f64::NAN),
                f1: report.f1.unwrap_or(f64::NAN),
                naive_cost: report.naive_cost,
                test_cost: report.test_cost,
                iterations: report.iterations,
            };
        }
        Ok(())
    })
}

/// European call price under Heston dynamics with the default FFT grid.
///
/// # Safety
/// `params` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rkc_heston_fft_price(params: *const RkcHestonParams, out: *mut f64) -> RkcStatus {
    guard(|| {
        let p = unsafe { params.as_ref() }.ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let hp = HestonParams {
            strike: p.strike,
            maturity: p.maturity,
            rate: p.rate,
            kappa: p.kappa,
            theta: p.theta,
            rho: p.rho,
            sigma: p.sigma,
            v0: p.v0,
            spot: p.spot,
        };
        let price = heston_fft_price(&hp, &FftSettings::default())?;
        unsafe { *out = price };
        Ok(())
    })
}
