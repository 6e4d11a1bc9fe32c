use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{from_nalgebra, to_nalgebra};
use crate::data::{DenseEstimate, Method, ObservedDataset};
use crate::error::{Error, Result};

/// Nuclear-norm regularized completion by iterated soft-thresholded SVD,
/// run along a descending path of shrinkage values with warm starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftImputeConfig {
    pub lambda_grid: Vec<f64>,
    pub max_iters: usize,
    /// Stop when `||Z_new - Z||_F^2 / ||Z||_F^2` falls below this.
    pub tol: f64,
    /// Keep at most this many singular triplets; `None` keeps all.
    pub rank_cap: Option<usize>,
}

impl SoftImputeConfig {
    pub fn with_grid(lambda_grid: Vec<f64>) -> Self {
        SoftImputeConfig {
            lambda_grid,
            max_iters: 300,
            tol: 1e-5,
            rank_cap: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::config("SoftImpute needs at least one lambda"));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config("SoftImpute lambdas must be finite and >= 0"));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("SoftImpute lambda grid must be strictly descending"));
        }
        if self.rank_cap == Some(0) {
            return Err(Error::config("SoftImpute rank cap must be at least 1"));
        }
        Ok(())
    }
}

fn observed_matrix(ds: &ObservedDataset) -> Array2<f64> {
    let mut x = Array2::zeros((ds.n(), ds.m()));
    for (u, i, v) in ds.triplets() {
        x[[u, i]] = v;
    }
    x
}

/// Twenty geometrically spaced values from the top singular value of the
/// zero-filled observation matrix down to a thousandth of it.
pub fn default_lambda_grid(ds: &ObservedDataset) -> Vec<f64> {
    let svd = to_nalgebra(&observed_matrix(ds)).svd(false, false);
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return vec![0.0];
    }
    (0..20)
        .map(|k| top * 1000f64.powf(-(k as f64) / 19.0))
        .collect()
}

/// One update `Z <- S_lambda(P_E(X) + P_E^perp(Z))`.
///
/// The thresholded SVD is formed from the eigendecomposition of the Gram
/// matrix on the shorter side: `U diag((s - lambda)_+ / s) U^T Y`.
pub fn softimpute_step(ds: &ObservedDataset, z: &Array2<f64>, lambda: f64, rank_cap: Option<usize>) -> Array2<f64> {
    let mut filled = z.clone();
    for (u, i, v) in ds.triplets() {
        filled[[u, i]] = v;
    }
    let wide = filled.nrows() <= filled.ncols();
    let y = if wide { to_nalgebra(&filled) } else { to_nalgebra(&filled).transpose() };
    let eig = (&y * y.transpose()).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let keep = rank_cap.unwrap_or(order.len()).min(order.len());
    let mut kept = Vec::new();
    for &k in &order[..keep] {
        let s = eig.eigenvalues[k].max(0.0).sqrt();
        if s <= lambda || s == 0.0 {
            break;
        }
        kept.push((k, (s - lambda) / s));
    }
    if kept.is_empty() {
        return Array2::zeros(filled.dim());
    }
    let basis = DMatrix::from_fn(y.nrows(), kept.len(), |r, c| eig.eigenvectors[(r, kept[c].0)]);
    let shrink = DMatrix::from_diagonal(&DVector::from_iterator(kept.len(), kept.iter().map(|k| k.1)));
    let out = &basis * (shrink * (basis.transpose() * &y));
    from_nalgebra(&if wide { out } else { out.transpose() })
}

/// `1/2 ||P_E(X - Z)||_F^2 + lambda ||Z||_*`.
pub fn softimpute_objective(ds: &ObservedDataset, z: &Array2<f64>, lambda: f64) -> f64 {
    let fit: f64 = ds.triplets().map(|(u, i, x)| (x - z[[u, i]]).powi(2)).sum();
    let nuclear: f64 = to_nalgebra(z).singular_values().iter().sum();
    0.5 * fit + lambda * nuclear
}

/// Solutions for every lambda in the grid, in grid order.
pub fn softimpute_path(ds: &ObservedDataset, cfg: &SoftImputeConfig) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    let mut z = Array2::<f64>::zeros((ds.n(), ds.m()));
    let mut path = Vec::with_capacity(cfg.lambda_grid.len());
    for &lambda in &cfg.lambda_grid {
        for _ in 0..cfg.max_iters {
            let next = softimpute_step(ds, &z, lambda, cfg.rank_cap);
            let change: f64 = (&next - &z).iter().map(|d| d * d).sum();
            let norm: f64 = z.iter().map(|d| d * d).sum();
            z = next;
            if change == 0.0 || (norm > 0.0 && change / norm < cfg.tol) {
                break;
            }
        }
        path.push(z.clone());
    }
    Ok(path)
}

/// The solution at the last lambda of the grid.
pub fn softimpute_fit(ds: &ObservedDataset, cfg: &SoftImputeConfig) -> Result<DenseEstimate> {
    let z = softimpute_path(ds, cfg)?.pop().expect("non-empty grid");
    DenseEstimate::new(z, Method::SoftImpute)
}
