//! C ABI for `onesided-mc`.
//!
//! Datasets and estimates cross the boundary as opaque handles that the
//! caller releases with the matching `*_free` function. Every fallible call
//! returns an [`OmcStatus`]; on failure [`omc_last_error`] describes the
//! problem. Panics are caught at the boundary and reported as
//! `OMC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use onesided_mc::baselines::{als_fit, softimpute_fit, AlsConfig, SoftImputeConfig};
use onesided_mc::harness::{evaluate, mse, GridSpec};
use onesided_mc::io::{read_dataset, write_dataset, DatasetHeader};
use onesided_mc::{
    full_pipeline, generate, oracle_regression, row_regression_baseline, theory_params, CovariateSet,
    DenseEstimate, Error, FunctionId, GroundTruthInstance, LatentFunction, Method, NeighborhoodSpec,
    ObservedDataset, PipelineConfig, Regime, SeedSpec, SynthConfig, TheoryInputs,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmcStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or a buffer of the wrong size.
    InvalidArgument = 1,
    Config = 2,
    Shape = 3,
    Parse = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmcRegime {
    RowOnly = 0,
    OracleMatching = 1,
    DistanceLimited = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OmcTheoryParams {
    pub regime: OmcRegime,
    pub h: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub delta: f64,
    pub row_only_threshold: f64,
    pub oracle_threshold: f64,
}

/// Observed data, plus the generator's truth when known.
pub struct OmcDataset {
    header: DatasetHeader,
    data: ObservedDataset,
    truth: Option<GroundTruthInstance>,
}

pub struct OmcEstimate {
    inner: DenseEstimate,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

struct Failure(OmcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) => OmcStatus::Config,
            Error::Shape { .. } => OmcStatus::Shape,
            Error::Parse { .. } => OmcStatus::Parse,
            Error::Io { .. } => OmcStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(OmcStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> OmcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            OmcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {msg}"));
            OmcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| invalid(format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_estimate(out: *mut *mut OmcEstimate, est: Result<DenseEstimate, Error>) -> Result<(), Failure> {
    put(out, OmcEstimate { inner: est? })
}

/// Message for the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next `omc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn omc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Draws a synthetic dataset for latent function `function` ("f1", "f2"
/// or "f3").
///
/// # Safety
/// `function` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_generate(
    function: *const c_char,
    n: usize,
    m: usize,
    p: f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut OmcDataset,
) -> OmcStatus {
    guard(|| {
        let id: FunctionId = str_arg(function, "function")?.parse()?;
        let cfg = SynthConfig::new(LatentFunction::from_id(&id)?, n, m, p, sigma, SeedSpec::new(seed));
        let (truth, data) = generate(&cfg)?;
        put(
            out,
            OmcDataset {
                header: DatasetHeader::from_config(&cfg),
                data,
                truth: Some(truth),
            },
        )
    })
}

/// Builds a dataset from `count` observations `(rows[k], cols[k], values[k])`
/// and `m * d2` column covariates in row-major order.
///
/// # Safety
/// Each array must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn omc_dataset_from_triplets(
    n: usize,
    m: usize,
    rows: *const usize,
    cols: *const usize,
    values: *const f64,
    count: usize,
    beta: *const f64,
    d2: usize,
    sigma: f64,
    out: *mut *mut OmcDataset,
) -> OmcStatus {
    guard(|| {
        let rows = slice_arg(rows, count, "rows")?;
        let cols = slice_arg(cols, count, "cols")?;
        let values = slice_arg(values, count, "values")?;
        let beta = slice_arg(beta, m.checked_mul(d2).ok_or_else(|| invalid("m * d2 overflows"))?, "beta")?;
        if rows.iter().any(|&u| u >= n) || cols.iter().any(|&i| i >= m) {
            return Err(Error::Config("observation index out of range".into()).into());
        }
        let trips: Vec<_> = (0..count).map(|k| (rows[k], cols[k], values[k])).collect();
        let data = ObservedDataset::from_triplets(n, m, &trips, CovariateSet::new(d2, beta.to_vec())?, sigma)?;
        put(
            out,
            OmcDataset {
                header: DatasetHeader::for_observed(&data),
                data,
                truth: None,
            },
        )
    })
}

/// Reads a dataset directory.
///
/// # Safety
/// `dir` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_dataset_load(dir: *const c_char, out: *mut *mut OmcDataset) -> OmcStatus {
    guard(|| {
        let bundle = read_dataset(Path::new(str_arg(dir, "dir")?))?;
        put(
            out,
            OmcDataset {
                header: bundle.header,
                data: bundle.data,
                truth: bundle.truth,
            },
        )
    })
}

/// Writes a dataset directory.
///
/// # Safety
/// `ds` must come from this library; `dir` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn omc_dataset_save(ds: *const OmcDataset, dir: *const c_char) -> OmcStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        write_dataset(Path::new(str_arg(dir, "dir")?), &ds.header, &ds.data, ds.truth.as_ref())?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn omc_dataset_rows(ds: *const OmcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.n())
}

/// # Safety
/// `ds` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn omc_dataset_cols(ds: *const OmcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.m())
}

/// # Safety
/// `ds` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn omc_dataset_observed(ds: *const OmcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.num_observed())
}

/// # Safety
/// `ds` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn omc_dataset_has_truth(ds: *const OmcDataset) -> bool {
    ds.as_ref().is_some_and(|d| d.truth.is_some())
}

/// # Safety
/// `ds` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn omc_dataset_free(ds: *mut OmcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Three-step estimator with `k` nearest rows and column radius `eta2`.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_ours(
    ds: *const OmcDataset,
    h: f64,
    eta2: f64,
    k: usize,
    out: *mut *mut OmcEstimate,
) -> OmcStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let cfg = PipelineConfig {
            h,
            spec: NeighborhoodSpec::k_nearest(k, eta2),
            split: false,
            seed: SeedSpec::new(0),
        };
        put_estimate(out, full_pipeline(&ds.data, &cfg))
    })
}

/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_rowreg(ds: *const OmcDataset, h: f64, out: *mut *mut OmcEstimate) -> OmcStatus {
    guard(|| put_estimate(out, row_regression_baseline(&ref_arg(ds, "dataset")?.data, h)))
}

/// Two-sided kernel regression; needs a dataset with truth.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_oracle(
    ds: *const OmcDataset,
    h_row: f64,
    h_col: f64,
    out: *mut *mut OmcEstimate,
) -> OmcStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let truth = ds
            .truth
            .as_ref()
            .ok_or_else(|| Failure::from(Error::Config("oracle regression needs the ground truth".into())))?;
        put_estimate(out, oracle_regression(&ds.data, &truth.row_covariates, h_row, h_col))
    })
}

/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_als(
    ds: *const OmcDataset,
    rank: usize,
    ridge: f64,
    seed: u64,
    out: *mut *mut OmcEstimate,
) -> OmcStatus {
    guard(|| {
        let cfg = AlsConfig {
            rank,
            ridge,
            seed: SeedSpec::new(seed),
            ..AlsConfig::default()
        };
        put_estimate(out, als_fit(&ref_arg(ds, "dataset")?.data, &cfg))
    })
}

/// SoftImpute at a single shrinkage value, started from zero.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_softimpute(
    ds: *const OmcDataset,
    lambda: f64,
    out: *mut *mut OmcEstimate,
) -> OmcStatus {
    guard(|| {
        let cfg = SoftImputeConfig::with_grid(vec![lambda]);
        put_estimate(out, softimpute_fit(&ref_arg(ds, "dataset")?.data, &cfg))
    })
}

/// Tunes `method` over the default grids by validation, then refits.
///
/// # Safety
/// `ds` must be a live handle, `method` a nul-terminated string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_tuned(
    ds: *const OmcDataset,
    method: *const c_char,
    seed: u64,
    out: *mut *mut OmcEstimate,
) -> OmcStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let method: Method = str_arg(method, "method")?.parse()?;
        let (est, _) = evaluate(&ds.data, ds.truth.as_ref(), method, &GridSpec::default(), SeedSpec::new(seed))?;
        put(out, OmcEstimate { inner: est })
    })
}

/// # Safety
/// `est` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_rows(est: *const OmcEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.inner.values.nrows())
}

/// # Safety
/// `est` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_cols(est: *const OmcEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.inner.values.ncols())
}

/// Copies the estimate into `buf` in row-major order. `len` must equal
/// rows * cols.
///
/// # Safety
/// `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_values(est: *const OmcEstimate, buf: *mut f64, len: usize) -> OmcStatus {
    guard(|| {
        let est = ref_arg(est, "estimate")?;
        let values = &est.inner.values;
        if len != values.len() {
            return Err(invalid(format!("buffer holds {len} values, estimate has {}", values.len())));
        }
        if buf.is_null() {
            return Err(invalid("buf is null"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for (d, s) in dst.iter_mut().zip(values.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Mean squared error against the dataset's truth.
///
/// # Safety
/// Both handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_mse(est: *const OmcEstimate, ds: *const OmcDataset, out: *mut f64) -> OmcStatus {
    guard(|| {
        let est = ref_arg(est, "estimate")?;
        let ds = ref_arg(ds, "dataset")?;
        let truth = ds
            .truth
            .as_ref()
            .ok_or_else(|| Failure::from(Error::Config("dataset has no ground truth".into())))?;
        let value = mse(&est.inner, truth)?;
        *out.as_mut().ok_or_else(|| invalid("out is null"))? = value;
        Ok(())
    })
}

/// # Safety
/// `est` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn omc_estimate_free(est: *mut OmcEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Regime and recommended parameters with unit constants.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omc_theory_params(
    n: usize,
    m: usize,
    p: f64,
    lambda: f64,
    lipschitz: f64,
    d1: usize,
    d2: usize,
    sigma: f64,
    out: *mut OmcTheoryParams,
) -> OmcStatus {
    guard(|| {
        let t = theory_params(&TheoryInputs {
            n,
            m,
            p,
            lambda,
            lipschitz,
            d1,
            d2,
            sigma,
        })?;
        let regime = match t.regime {
            Regime::RowOnly => OmcRegime::RowOnly,
            Regime::OracleMatching => OmcRegime::OracleMatching,
            Regime::DistanceLimited => OmcRegime::DistanceLimited,
        };
        *out.as_mut().ok_or_else(|| invalid("out is null"))? = OmcTheoryParams {
            regime,
            h: t.h,
            eta1: t.eta1,
            eta2: t.eta2,
            delta: t.delta,
            row_only_threshold: t.row_only_threshold,
            oracle_threshold: t.oracle_threshold,
        };
        Ok(())
    })
}
