//! Shared data types: covariates, observation masks, observed datasets,
//! ground truth, and dense estimates.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use bitvec::vec::BitVec;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, SeedSpec};
use crate::synthgen::FunctionId;

/// Points in the unit hypercube `[0,1]^dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateSet {
    dim: usize,
    values: Vec<f64>,
}

impl CovariateSet {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("covariate dimension must be at least 1"));
        }
        if values.len() % dim != 0 {
            return Err(Error::config(format!(
                "{} covariate values do not divide into points of dimension {dim}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::config(format!(
                "covariate coordinate {bad} outside [0, 1]"
            )));
        }
        Ok(CovariateSet { dim, values })
    }

    /// One-dimensional covariates from a list of scalars.
    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Infinity-norm distance between points `i` and `j`.
    pub fn linf(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn permuted(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.point(i));
        }
        CovariateSet {
            dim: self.dim,
            values,
        }
    }
}

/// Set of observed `(row, col)` positions in an `n x m` matrix.
///
/// Rows keep their observed columns sorted for iteration; a bitset gives
/// constant-time membership.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMask {
    n: usize,
    m: usize,
    rows: Vec<Vec<usize>>,
    bits: BitVec,
}

impl ObservationMask {
    pub fn new(n: usize, m: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        let mut bits = BitVec::repeat(false, n * m);
        for (u, i) in entries {
            if u >= n || i >= m {
                return Err(Error::config(format!(
                    "observation ({u}, {i}) outside a {n}x{m} matrix"
                )));
            }
            if bits.replace(u * m + i, true) {
                return Err(Error::config(format!("duplicate observation ({u}, {i})")));
            }
            rows[u].push(i);
        }
        for row in &mut rows {
            row.sort_unstable();
        }
        Ok(ObservationMask { n, m, rows, bits })
    }

    pub fn full(n: usize, m: usize) -> Self {
        let rows = vec![(0..m).collect::<Vec<_>>(); n];
        ObservationMask {
            n,
            m,
            rows,
            bits: BitVec::repeat(true, n * m),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        u < self.n && i < self.m && self.bits[u * self.m + i]
    }

    /// Observed columns of row `u`, ascending.
    pub fn row(&self, u: usize) -> &[usize] {
        &self.rows[u]
    }

    /// All observed positions in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, cols)| cols.iter().map(move |&i| (u, i)))
    }
}

/// Sparse noisy observations together with the observed column covariates.
/// Row covariates are deliberately absent.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedDataset {
    mask: ObservationMask,
    /// `values[u][k]` is the value at column `mask.row(u)[k]`.
    values: Vec<Vec<f64>>,
    col_covariates: CovariateSet,
    sigma: f64,
}

impl ObservedDataset {
    /// Builds a dataset from `(row, col, value)` triplets in any order.
    pub fn from_triplets(
        n: usize,
        m: usize,
        triplets: &[(usize, usize, f64)],
        col_covariates: CovariateSet,
        sigma: f64,
    ) -> Result<Self> {
        let mask = ObservationMask::new(n, m, triplets.iter().map(|&(u, i, _)| (u, i)))?;
        let mut values: Vec<Vec<f64>> = mask.rows.iter().map(|r| vec![0.0; r.len()]).collect();
        for &(u, i, x) in triplets {
            let k = mask.rows[u].binary_search(&i).expect("entry present in mask");
            values[u][k] = x;
        }
        Self::from_parts(mask, values, col_covariates, sigma)
    }

    /// Builds a dataset from a mask and row-aligned values.
    pub fn from_parts(
        mask: ObservationMask,
        values: Vec<Vec<f64>>,
        col_covariates: CovariateSet,
        sigma: f64,
    ) -> Result<Self> {
        if col_covariates.len() != mask.m {
            return Err(Error::config(format!(
                "{} column covariates for {} columns",
                col_covariates.len(),
                mask.m
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("noise level sigma={sigma} must be >= 0")));
        }
        if values.len() != mask.n
            || values.iter().zip(&mask.rows).any(|(v, r)| v.len() != r.len())
        {
            return Err(Error::config("observed values do not match the mask"));
        }
        if values.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::config("observed values must be finite"));
        }
        Ok(ObservedDataset {
            mask,
            values,
            col_covariates,
            sigma,
        })
    }

    pub fn n(&self) -> usize {
        self.mask.n
    }

    pub fn m(&self) -> usize {
        self.mask.m
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn beta(&self) -> &CovariateSet {
        &self.col_covariates
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn num_observed(&self) -> usize {
        self.mask.len()
    }

    /// Observed columns of row `u`, ascending, and their values.
    pub fn row(&self, u: usize) -> (&[usize], &[f64]) {
        (&self.mask.rows[u], &self.values[u])
    }

    pub fn value(&self, u: usize, i: usize) -> Option<f64> {
        if !self.mask.contains(u, i) {
            return None;
        }
        let k = self.mask.rows[u].binary_search(&i).ok()?;
        Some(self.values[u][k])
    }

    /// All observations in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.mask
            .rows
            .iter()
            .zip(&self.values)
            .enumerate()
            .flat_map(|(u, (cols, vals))| cols.iter().zip(vals).map(move |(&i, &x)| (u, i, x)))
    }

    pub fn row_mean(&self, u: usize) -> Option<f64> {
        let vals = &self.values[u];
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean of all observed values; zero for an empty dataset.
    pub fn global_mean(&self) -> f64 {
        let count = self.num_observed();
        if count == 0 {
            return 0.0;
        }
        self.values.iter().flatten().sum::<f64>() / count as f64
    }

    /// Keeps the observations for which `keep(u, i)` holds.
    pub fn filter(&self, mut keep: impl FnMut(usize, usize) -> bool) -> ObservedDataset {
        let mut rows = Vec::with_capacity(self.n());
        let mut values = Vec::with_capacity(self.n());
        let mut bits = BitVec::repeat(false, self.n() * self.m());
        for (u, (cols, vals)) in self.mask.rows.iter().zip(&self.values).enumerate() {
            let mut rc = Vec::new();
            let mut rv = Vec::new();
            for (&i, &x) in cols.iter().zip(vals) {
                if keep(u, i) {
                    rc.push(i);
                    rv.push(x);
                    bits.set(u * self.m() + i, true);
                }
            }
            rows.push(rc);
            values.push(rv);
        }
        ObservedDataset {
            mask: ObservationMask {
                n: self.n(),
                m: self.m(),
                rows,
                bits,
            },
            values,
            col_covariates: self.col_covariates.clone(),
            sigma: self.sigma,
        }
    }

    /// Reorders rows so that new row `r` is old row `order[r]`.
    pub fn permute_rows(&self, order: &[usize]) -> ObservedDataset {
        assert_eq!(order.len(), self.n());
        let mut bits = BitVec::repeat(false, self.n() * self.m());
        let rows: Vec<Vec<usize>> = order.iter().map(|&u| self.mask.rows[u].clone()).collect();
        for (r, cols) in rows.iter().enumerate() {
            for &i in cols {
                bits.set(r * self.m() + i, true);
            }
        }
        ObservedDataset {
            mask: ObservationMask {
                n: self.n(),
                m: self.m(),
                rows,
                bits,
            },
            values: order.iter().map(|&u| self.values[u].clone()).collect(),
            col_covariates: self.col_covariates.clone(),
            sigma: self.sigma,
        }
    }

    /// SHA-256 over the canonical content (shape, sigma, covariates,
    /// observations), hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.m() as u64).to_le_bytes());
        h.update((self.col_covariates.dim() as u64).to_le_bytes());
        h.update(self.sigma.to_bits().to_le_bytes());
        for x in self.col_covariates.as_slice() {
            h.update(x.to_bits().to_le_bytes());
        }
        for (u, i, x) in self.triplets() {
            h.update((u as u64).to_le_bytes());
            h.update((i as u64).to_le_bytes());
            h.update(x.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Declared Holder smoothness `|f(x) - f(x')| <= L * ||x - x'||_inf^lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub lambda: f64,
    pub lipschitz: f64,
}

/// Generator-side truth: latent covariates and the dense mean matrix.
/// Only evaluation and oracle methods may look at this.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthInstance {
    pub function: FunctionId,
    pub row_covariates: CovariateSet,
    pub col_covariates: CovariateSet,
    pub truth: Array2<f64>,
    pub smoothness: Smoothness,
}

impl GroundTruthInstance {
    pub fn n(&self) -> usize {
        self.truth.nrows()
    }

    pub fn m(&self) -> usize {
        self.truth.ncols()
    }

    pub fn permute_rows(&self, order: &[usize]) -> GroundTruthInstance {
        let truth = Array2::from_shape_fn(self.truth.dim(), |(r, i)| self.truth[[order[r], i]]);
        GroundTruthInstance {
            function: self.function.clone(),
            row_covariates: self.row_covariates.permuted(order),
            col_covariates: self.col_covariates.clone(),
            truth,
            smoothness: self.smoothness,
        }
    }
}

/// Estimator identifiers, as spelled on the command line and in result files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ours,
    #[serde(rename = "rowreg")]
    RowRegression,
    Oracle,
    Als,
    #[serde(rename = "softimpute")]
    SoftImpute,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ours,
        Method::RowRegression,
        Method::Oracle,
        Method::Als,
        Method::SoftImpute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::RowRegression => "rowreg",
            Method::Oracle => "oracle",
            Method::Als => "als",
            Method::SoftImpute => "softimpute",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown method '{s}' (expected one of ours, rowreg, oracle, als, softimpute)"
                ))
            })
    }
}

/// A dense `n x m` estimate of the mean matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseEstimate {
    pub values: Array2<f64>,
    pub method: Method,
}

impl DenseEstimate {
    pub fn new(values: Array2<f64>, method: Method) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(format!("{method} produced a non-finite estimate")));
        }
        Ok(DenseEstimate { values, method })
    }
}

/// Splits the observations into the distance-learning part and the
/// prediction part.
///
/// When `enabled`, each observation goes to the first part with probability
/// one half, independently; the two parts partition the mask. When disabled
/// both parts borrow the full dataset.
pub fn split_mask(
    ds: &ObservedDataset,
    seed: SeedSpec,
    enabled: bool,
) -> (Cow<'_, ObservedDataset>, Cow<'_, ObservedDataset>) {
    if !enabled {
        return (Cow::Borrowed(ds), Cow::Borrowed(ds));
    }
    let mut rng = seed.with_stage(rng::stage::SAMPLE_SPLIT).rng();
    let mut first: BitVec = BitVec::repeat(false, ds.n() * ds.m());
    for (u, i) in ds.mask().iter() {
        if rng::unit(&mut rng) < 0.5 {
            first.set(u * ds.m() + i, true);
        }
    }
    let m = ds.m();
    let a = ds.filter(|u, i| first[u * m + i]);
    let b = ds.filter(|u, i| !first[u * m + i]);
    (Cow::Owned(a), Cow::Owned(b))
}
