//! C ABI over the fleetcast library.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `fc_*_free`. Fallible calls return an [`FcStatus`] and
//! write results through out-pointers; on failure [`fc_last_error`] holds a
//! message for the calling thread.
//!
//! Arrays are passed as pointer plus length. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;

use fleetcast::conformal::{self, QuantileMode};
use fleetcast::copula::{self, CorrelationModel, FleetDistribution, NormalScoreMatrix};
use fleetcast::metrics::{self, IntervalRow};
use fleetcast::{timefmt, Error, QuantileCurve};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InsufficientHistory = 4,
    Data = 5,
    Panic = 6,
}

/// Piecewise-linear site quantile curve.
pub struct FcCurve(QuantileCurve);

/// Gaussian copula correlation.
pub struct FcModel(CorrelationModel);

/// Sorted Monte Carlo sample of the fleet total.
pub struct FcFleet(FleetDistribution);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FcMetrics {
    pub picp: f64,
    pub aiw: f64,
    pub winkler: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FcStatus {
    match e {
        Error::EmptyCurve
        | Error::LevelOutOfRange { .. }
        | Error::DuplicateLevel { .. }
        | Error::NonFinite { .. }
        | Error::InvalidSupport { .. }
        | Error::InvalidArgument(_) => FcStatus::InvalidArgument,
        Error::DimensionMismatch { .. } | Error::SiteOrder(_) => FcStatus::DimensionMismatch,
        Error::InsufficientHistory(_) | Error::LookAhead(_) => FcStatus::InsufficientHistory,
        _ => FcStatus::Data,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, turning errors and panics into a status plus thread-local message.
fn call(f: impl FnOnce() -> Result<(), Fail>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FcStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FcStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(v);
    Ok(())
}

fn site_names(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a curve from `n` (level, value) knots with support `[lo, hi]`.
/// Crossing knots are repaired; see `fc_curve_repaired`.
///
/// # Safety
/// `levels` and `values` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_curve_new(
    levels: *const f64,
    values: *const f64,
    n: usize,
    lo: f64,
    hi: f64,
    out: *mut *mut FcCurve,
) -> FcStatus {
    call(|| {
        let levels = slice(levels, n, "levels")?;
        let values = slice(values, n, "values")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let knots: Vec<(f64, f64)> = levels.iter().copied().zip(values.iter().copied()).collect();
        let curve = QuantileCurve::validate_and_repair(&knots, lo, hi)?;
        out.write(Box::into_raw(Box::new(FcCurve(curve))));
        Ok(())
    })
}

/// # Safety
/// `curve` must come from `fc_curve_new` and not be freed already; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn fc_curve_free(curve: *mut FcCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// # Safety
/// `curve` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_curve_cdf(curve: *const FcCurve, x: f64, out: *mut f64) -> FcStatus {
    call(|| {
        let c = handle(curve, "curve")?;
        if x.is_nan() {
            return Err(Error::NonFinite { what: "cdf argument" }.into());
        }
        put(out, c.0.eval_cdf(x), "out")
    })
}

/// # Safety
/// `curve` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_curve_quantile(curve: *const FcCurve, u: f64, out: *mut f64) -> FcStatus {
    call(|| {
        let c = handle(curve, "curve")?;
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!("level {u} outside [0, 1]")).into());
        }
        put(out, c.0.inv_cdf(u), "out")
    })
}

/// # Safety
/// `curve` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_curve_repaired(curve: *const FcCurve, out: *mut bool) -> FcStatus {
    call(|| put(out, handle(curve, "curve")?.0.repaired(), "out"))
}

/// Fits the copula correlation from normal scores, `n_sites` rows by
/// `n_times` columns, row-major.
///
/// # Safety
/// `scores` must point to `n_sites * n_times` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_model_fit(
    scores: *const f64,
    n_sites: usize,
    n_times: usize,
    out: *mut *mut FcModel,
) -> FcStatus {
    call(|| {
        let len = n_sites
            .checked_mul(n_times)
            .ok_or_else(|| Error::InvalidArgument("score matrix too large".into()))?;
        let data = slice(scores, len, "scores")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let times = (0..n_times as i64).map(timefmt::from_hour_index).collect();
        let m = DMatrix::from_row_slice(n_sites, n_times, data);
        let scores = NormalScoreMatrix::new(site_names(n_sites), times, m)?;
        let model = copula::estimate_correlation(&scores)?;
        out.write(Box::into_raw(Box::new(FcModel(model))));
        Ok(())
    })
}

/// Wraps a given `n x n` correlation matrix (row-major), repairing it to
/// positive definite if needed.
///
/// # Safety
/// `matrix` must point to `n * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_model_from_matrix(matrix: *const f64, n: usize, out: *mut *mut FcModel) -> FcStatus {
    call(|| {
        let len = n
            .checked_mul(n)
            .ok_or_else(|| Error::InvalidArgument("matrix too large".into()))?;
        let data = slice(matrix, len, "matrix")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let m = DMatrix::from_row_slice(n, n, data);
        let model = CorrelationModel::from_matrix(site_names(n), &m)?;
        out.write(Box::into_raw(Box::new(FcModel(model))));
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_model_identity(n: usize, out: *mut *mut FcModel) -> FcStatus {
    call(|| {
        if n == 0 {
            return Err(Error::InvalidArgument("model needs at least one site".into()).into());
        }
        put(out, Box::into_raw(Box::new(FcModel(CorrelationModel::identity(site_names(n))))), "out")
    })
}

/// # Safety
/// `model` must come from an `fc_model_*` constructor; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn fc_model_free(model: *mut FcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of sites; 0 for NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn fc_model_dim(model: *const FcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Copies the correlation matrix, row-major, into `out` of length `len`.
///
/// # Safety
/// `model` must be a live handle; `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fc_model_correlation(model: *const FcModel, out: *mut f64, len: usize) -> FcStatus {
    call(|| {
        let m = handle(model, "model")?;
        let n = m.0.dim();
        if len != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: len,
            }
            .into());
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let sigma = m.0.sigma();
        for i in 0..n {
            for j in 0..n {
                out.add(i * n + j).write(sigma[(i, j)]);
            }
        }
        Ok(())
    })
}

/// Samples the fleet total for one hour. `curves[i]` is the marginal of model
/// site `i`; `hour` (hours since the Unix epoch) selects the random stream so
/// results match the library and CLI for the same seed.
///
/// # Safety
/// `model` must be live; `curves` must point to `n` live curve handles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_aggregate(
    model: *const FcModel,
    curves: *const *const FcCurve,
    n: usize,
    hour: i64,
    samples: usize,
    seed: u64,
    out: *mut *mut FcFleet,
) -> FcStatus {
    call(|| {
        let m = handle(model, "model")?;
        let handles = slice(curves, n, "curves")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let ts = timefmt::from_hour_index(hour);
        let owned = handles
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let c = handle(c, "curve")?;
                Ok(c.0.clone().with_site(i.to_string()).with_timestamp(ts))
            })
            .collect::<Result<Vec<_>, Fail>>()?;
        let refs: Vec<&QuantileCurve> = owned.iter().collect();
        let dist = copula::aggregate(&m.0, &refs, samples, seed)?;
        out.write(Box::into_raw(Box::new(FcFleet(dist))));
        Ok(())
    })
}

/// # Safety
/// `fleet` must come from `fc_aggregate`; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn fc_fleet_free(fleet: *mut FcFleet) {
    if !fleet.is_null() {
        drop(Box::from_raw(fleet));
    }
}

/// Number of samples; 0 for NULL.
///
/// # Safety
/// `fleet` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn fc_fleet_len(fleet: *const FcFleet) -> usize {
    fleet.as_ref().map_or(0, |f| f.0.len())
}

/// Type-7 empirical quantile of the fleet sample.
///
/// # Safety
/// `fleet` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_fleet_quantile(fleet: *const FcFleet, u: f64, out: *mut f64) -> FcStatus {
    call(|| {
        let f = handle(fleet, "fleet")?;
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!("level {u} outside [0, 1]")).into());
        }
        put(out, f.0.quantile(u), "out")
    })
}

/// Central `1 - alpha` interval of the fleet sample.
///
/// # Safety
/// `fleet` must be a live handle; `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_fleet_interval(fleet: *const FcFleet, alpha: f64, lo: *mut f64, hi: *mut f64) -> FcStatus {
    call(|| {
        let f = handle(fleet, "fleet")?;
        if lo.is_null() || hi.is_null() {
            return Err(Fail::Null("interval bounds"));
        }
        let (l, h) = copula::fleet_interval(&f.0, alpha)?;
        lo.write(l);
        hi.write(h);
        Ok(())
    })
}

/// `max(lo - y, y - hi)`.
#[no_mangle]
pub extern "C" fn fc_conformity_score(lo: f64, hi: f64, y: f64) -> f64 {
    conformal::conformity_score(lo, hi, y)
}

/// Conformal quantile of `n` scores. `finite_sample` selects the
/// `ceil((n + 1)(1 - alpha))`-th order statistic instead of the plain
/// empirical quantile.
///
/// # Safety
/// `scores` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_conformal_quantile(
    scores: *const f64,
    n: usize,
    alpha: f64,
    finite_sample: bool,
    out: *mut f64,
) -> FcStatus {
    call(|| {
        let s = slice(scores, n, "scores")?;
        let mode = if finite_sample {
            QuantileMode::FiniteSample
        } else {
            QuantileMode::Plain
        };
        put(out, conformal::conformal_quantile(s, alpha, mode)?, "out")
    })
}

/// Weighted conformal quantile with an extra `test_weight` at `+inf`.
///
/// # Safety
/// `scores` and `weights` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_weighted_quantile(
    scores: *const f64,
    weights: *const f64,
    n: usize,
    test_weight: f64,
    alpha: f64,
    out: *mut f64,
) -> FcStatus {
    call(|| {
        let s = slice(scores, n, "scores")?;
        let w = slice(weights, n, "weights")?;
        put(
            out,
            conformal::weighted_conformal_quantile_with_test_mass(s, w, test_weight, alpha)?,
            "out",
        )
    })
}

/// Widens `[lo, hi]` by `s_hat` and clips to `[support_lo, support_hi]`.
///
/// # Safety
/// `out_lo` and `out_hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_calibrate_interval(
    lo: f64,
    hi: f64,
    s_hat: f64,
    support_lo: f64,
    support_hi: f64,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> FcStatus {
    call(|| {
        if out_lo.is_null() || out_hi.is_null() {
            return Err(Fail::Null("interval bounds"));
        }
        if [lo, hi, s_hat, support_lo, support_hi].iter().any(|v| v.is_nan()) || support_hi < support_lo {
            return Err(Error::InvalidArgument("NaN bound or empty support".into()).into());
        }
        let (l, h) = conformal::calibrate_interval((lo, hi), s_hat, (support_lo, support_hi));
        out_lo.write(l);
        out_hi.write(h);
        Ok(())
    })
}

/// PICP, mean width and mean Winkler score of `n` intervals.
///
/// # Safety
/// `lower`, `upper` and `realized` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_interval_metrics(
    lower: *const f64,
    upper: *const f64,
    realized: *const f64,
    n: usize,
    alpha: f64,
    out: *mut FcMetrics,
) -> FcStatus {
    call(|| {
        let lo = slice(lower, n, "lower")?;
        let hi = slice(upper, n, "upper")?;
        let y = slice(realized, n, "realized")?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")).into());
        }
        let rows: Vec<IntervalRow> = (0..n)
            .map(|i| IntervalRow {
                timestamp: timefmt::from_hour_index(i as i64),
                lower: lo[i],
                upper: hi[i],
                realized: y[i],
            })
            .collect();
        let m = FcMetrics {
            picp: metrics::picp(&rows)?,
            aiw: metrics::aiw(&rows)?,
            winkler: metrics::winkler(&rows, alpha)?,
        };
        put(out, m, "out")
    })
}
