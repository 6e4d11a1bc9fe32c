//! Fixed-radius nearest-neighbor completion over estimated row distances and
//! observed column covariates, and the end-to-end three-step estimator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_mask, CovariateSet, DenseEstimate, Method, ObservedDataset};
use crate::distance::{estimate_distances, RowDistanceMatrix};
use crate::error::{Error, Result};
use crate::kernel::fit_rows;
use crate::neighborhood::{block_average, windows, Window};
use crate::rng::SeedSpec;

/// How the row neighborhood `N1(u)` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowRule {
    /// Rows with `dsq(u, v) <= eta1^2`.
    Radius(f64),
    /// `u` and its `k - 1` closest comparable rows.
    KNearest(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub row_rule: RowRule,
    /// Column radius `eta2` in the infinity norm.
    pub col_radius: f64,
}

impl NeighborhoodSpec {
    pub fn radius(eta1: f64, eta2: f64) -> Self {
        NeighborhoodSpec {
            row_rule: RowRule::Radius(eta1),
            col_radius: eta2,
        }
    }

    pub fn k_nearest(k: usize, eta2: f64) -> Self {
        NeighborhoodSpec {
            row_rule: RowRule::KNearest(k),
            col_radius: eta2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.row_rule {
            RowRule::Radius(r) if !(r >= 0.0) => {
                return Err(Error::config(format!("eta1={r} must be >= 0")))
            }
            RowRule::KNearest(0) => return Err(Error::config("k must be at least 1")),
            _ => {}
        }
        if !(self.col_radius >= 0.0) {
            return Err(Error::config(format!("eta2={} must be >= 0", self.col_radius)));
        }
        Ok(())
    }
}

/// Comparable rows other than `u`, closest first; ties go to the lower index.
pub(crate) fn ranked_neighbors(dists: &RowDistanceMatrix, u: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..dists.n())
        .filter(|&v| v != u && dists.comparable(u, v))
        .collect();
    others.sort_by(|&a, &b| dists.dsq(u, a).total_cmp(&dists.dsq(u, b)).then(a.cmp(&b)));
    others
}

/// Row neighborhood `N1(u)`, ascending. Always contains `u`; incomparable
/// rows are never included.
pub fn build_row_neighborhood(dists: &RowDistanceMatrix, u: usize, rule: RowRule) -> Vec<usize> {
    let mut set = match rule {
        RowRule::Radius(eta1) => {
            let limit = eta1 * eta1;
            (0..dists.n())
                .filter(|&v| v == u || (dists.comparable(u, v) && dists.dsq(u, v) <= limit))
                .collect()
        }
        RowRule::KNearest(k) => {
            let mut set = ranked_neighbors(dists, u);
            set.truncate(k.saturating_sub(1));
            set.push(u);
            set
        }
    };
    set.sort_unstable();
    set
}

/// Column neighborhood `N2(i) = { j : ||beta_i - beta_j||_inf <= eta2 }`.
pub fn build_col_neighborhood(beta: &CovariateSet, i: usize, eta2: f64) -> Vec<usize> {
    (0..beta.len()).filter(|&j| beta.linf(i, j) <= eta2).collect()
}

/// Averages the observations of `ds` over `N1(u) x N2(i)` for every cell.
///
/// An empty block falls back to the row's observed mean and then to the
/// global mean. (`u` always belongs to `N1(u)`, so the block already covers
/// row `u`'s own column window.)
pub fn nn_predict(
    ds: &ObservedDataset,
    dists: &RowDistanceMatrix,
    spec: &NeighborhoodSpec,
) -> Result<DenseEstimate> {
    spec.validate()?;
    if dists.n() != ds.n() {
        return Err(Error::Shape {
            expected: (ds.n(), ds.n()),
            actual: (dists.n(), dists.n()),
        });
    }
    let row_sets: Vec<Vec<usize>> = (0..ds.n())
        .into_par_iter()
        .map(|u| build_row_neighborhood(dists, u, spec.row_rule))
        .collect();
    let col_sets = windows(ds.beta(), Window::Radius(spec.col_radius));
    DenseEstimate::new(block_average(ds, &row_sets, &col_sets), Method::Ours)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Bandwidth of the per-row smoother.
    pub h: f64,
    pub spec: NeighborhoodSpec,
    /// Split the observations into disjoint distance and prediction parts.
    pub split: bool,
    pub seed: SeedSpec,
}

/// Runs the three steps: smooth each row, estimate debiased row distances,
/// then average over nearest-neighbor blocks.
pub fn full_pipeline(ds: &ObservedDataset, cfg: &PipelineConfig) -> Result<DenseEstimate> {
    full_pipeline_with_distances(ds, cfg).map(|(est, _)| est)
}

/// [`full_pipeline`], also returning the distance matrix it used.
pub fn full_pipeline_with_distances(
    ds: &ObservedDataset,
    cfg: &PipelineConfig,
) -> Result<(DenseEstimate, RowDistanceMatrix)> {
    cfg.spec.validate()?;
    let (learn, predict) = split_mask(ds, cfg.seed, cfg.split);
    let fit = fit_rows(&learn, cfg.h)?;
    let dists = estimate_distances(&fit, ds.sigma());
    let est = nn_predict(&predict, &dists, &cfg.spec)?;
    Ok((est, dists))
}
