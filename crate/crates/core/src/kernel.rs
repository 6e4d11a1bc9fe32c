//! Rectangular-kernel Nadaraya-Watson regression: per-row smoothing over the
//! column covariates, the row-regression baseline, and the two-sided oracle
//! regression that is handed the row covariates.

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{CovariateSet, DenseEstimate, Method, ObservedDataset};
use crate::error::{Error, Result};
use crate::neighborhood::{block_average, windows, Window};

/// `K(b) = 1` iff `max_l |b_l| <= 1/2`.
pub fn rect_kernel(b: &[f64]) -> f64 {
    if b.iter().all(|x| x.abs() <= 0.5) {
        1.0
    } else {
        0.0
    }
}

/// `K((a - b) / h) == 1`, without allocating the scaled difference.
pub fn rect_kernel_between(a: &[f64], b: &[f64], h: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| ((x - y) / h).abs() <= 0.5)
}

/// Per-row kernel smoother output.
#[derive(Clone, Debug, PartialEq)]
pub struct RowRegressionFit {
    /// `NaN` where the window holds no observation.
    fhat: Array2<f64>,
    weights: Array2<u32>,
    h: f64,
}

impl RowRegressionFit {
    pub fn n(&self) -> usize {
        self.fhat.nrows()
    }

    pub fn m(&self) -> usize {
        self.fhat.ncols()
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Smoothed value, or `None` when `W_ui = 0`.
    pub fn value(&self, u: usize, i: usize) -> Option<f64> {
        (self.weights[[u, i]] > 0).then(|| self.fhat[[u, i]])
    }

    pub fn weight(&self, u: usize, i: usize) -> u32 {
        self.weights[[u, i]]
    }

    pub fn fhat(&self) -> &Array2<f64> {
        &self.fhat
    }

    pub fn weights(&self) -> &Array2<u32> {
        &self.weights
    }
}

fn check_bandwidth(h: f64, name: &str) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name}={h} must be a positive finite bandwidth")))
    }
}

/// Smooths each row of `ds` over the column covariates with bandwidth `h`.
///
/// `fhat(u, i)` is the mean of row `u`'s observations at columns `j` with
/// `K((beta_i - beta_j) / h) = 1`, summed in ascending column order.
pub fn fit_rows(ds: &ObservedDataset, h: f64) -> Result<RowRegressionFit> {
    check_bandwidth(h, "h")?;
    let wins = windows(ds.beta(), Window::Kernel(h));
    Ok(fit_rows_with_windows(ds, &wins, h))
}

pub(crate) fn fit_rows_with_windows(ds: &ObservedDataset, wins: &[Vec<usize>], h: f64) -> RowRegressionFit {
    let (n, m) = (ds.n(), ds.m());
    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut present = vec![false; m];
            let mut dense = vec![0.0; m];
            let (cols, vals) = ds.row(u);
            for (&j, &x) in cols.iter().zip(vals) {
                present[j] = true;
                dense[j] = x;
            }
            let mut fh = vec![f64::NAN; m];
            let mut w = vec![0u32; m];
            if cols.is_empty() {
                return (fh, w);
            }
            for i in 0..m {
                let (mut s, mut c) = (0.0, 0u32);
                for &j in &wins[i] {
                    if present[j] {
                        s += dense[j];
                        c += 1;
                    }
                }
                if c > 0 {
                    fh[i] = s / c as f64;
                    w[i] = c;
                }
            }
            (fh, w)
        })
        .collect();
    let mut fhat = Array2::from_elem((n, m), f64::NAN);
    let mut weights = Array2::zeros((n, m));
    for (u, (fh, w)) in rows.into_iter().enumerate() {
        for i in 0..m {
            fhat[[u, i]] = fh[i];
            weights[[u, i]] = w[i];
        }
    }
    RowRegressionFit { fhat, weights, h }
}

/// Estimates every row separately with the kernel smoother. Cells with an
/// empty window take the row mean, or the global mean for an empty row.
pub fn row_regression_baseline(ds: &ObservedDataset, h: f64) -> Result<DenseEstimate> {
    let fit = fit_rows(ds, h)?;
    let global = ds.global_mean();
    let values = Array2::from_shape_fn((ds.n(), ds.m()), |(u, i)| {
        fit.value(u, i)
            .unwrap_or_else(|| ds.row_mean(u).unwrap_or(global))
    });
    DenseEstimate::new(values, Method::RowRegression)
}

/// Two-sided kernel regression given the hidden row covariates: averages
/// observations inside the `h1` window in row-covariate space and the `h2`
/// window in column-covariate space.
pub fn oracle_regression(
    ds: &ObservedDataset,
    alpha: &CovariateSet,
    h1: f64,
    h2: f64,
) -> Result<DenseEstimate> {
    check_bandwidth(h1, "h1")?;
    check_bandwidth(h2, "h2")?;
    if alpha.len() != ds.n() {
        return Err(Error::config(format!(
            "{} row covariates for {} rows",
            alpha.len(),
            ds.n()
        )));
    }
    let row_sets = windows(alpha, Window::Kernel(h1));
    let col_sets = windows(ds.beta(), Window::Kernel(h2));
    DenseEstimate::new(block_average(ds, &row_sets, &col_sets), Method::Oracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSpec;
    use crate::synthgen::{generate, LatentFunction, SynthConfig};
    use proptest::prelude::*;

    fn one_row(beta: Vec<f64>, obs: &[(usize, f64)]) -> ObservedDataset {
        let m = beta.len();
        let trips: Vec<_> = obs.iter().map(|&(i, x)| (0, i, x)).collect();
        ObservedDataset::from_triplets(1, m, &trips, CovariateSet::from_scalars(beta).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn kernel_boundary() {
        assert_eq!(rect_kernel(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(rect_kernel(&[0.5]), 1.0);
        assert_eq!(rect_kernel(&[-0.5]), 1.0);
        assert_eq!(rect_kernel(&[0.3, 0.6]), 0.0);
        assert_eq!(rect_kernel(&[0.500_000_000_000_001]), 0.0);
    }

    #[test]
    fn hand_computed_window() {
        // beta_i = 0.15 is the fourth column; 0.1 and 0.2 fall within h/2 = 0.15
        let ds = one_row(vec![0.1, 0.2, 0.9, 0.15], &[(0, 1.0), (1, 2.0), (2, 5.0)]);
        let fit = fit_rows(&ds, 0.3).unwrap();
        assert_eq!(fit.weight(0, 3), 2);
        assert!((fit.value(0, 3).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn full_window_gives_row_mean() {
        let ds = one_row(vec![0.0, 0.3, 0.7, 1.0], &[(0, 1.0), (2, 4.0)]);
        let fit = fit_rows(&ds, 2.0).unwrap();
        for i in 0..4 {
            assert_eq!(fit.weight(0, i), 2);
            assert_eq!(fit.value(0, i), Some(2.5));
        }
    }

    #[test]
    fn empty_windows_flagged() {
        let ds = one_row(vec![0.0, 1.0], &[(0, 3.0)]);
        let fit = fit_rows(&ds, 0.1).unwrap();
        assert_eq!(fit.value(0, 0), Some(3.0));
        assert_eq!(fit.value(0, 1), None);
        assert!(fit_rows(&ds, 0.0).is_err());
        assert!(fit_rows(&ds, -1.0).is_err());
    }

    #[test]
    fn baseline_fallbacks() {
        let beta = CovariateSet::from_scalars(vec![0.0, 0.5, 1.0]).unwrap();
        let ds = ObservedDataset::from_triplets(2, 3, &[(0, 0, 2.0), (0, 1, 4.0)], beta, 0.0).unwrap();
        let est = row_regression_baseline(&ds, 0.2).unwrap();
        // row 0, column 2: empty window -> row mean
        assert_eq!(est.values[[0, 2]], 3.0);
        // row 1 is empty -> global mean everywhere
        for i in 0..3 {
            assert_eq!(est.values[[1, i]], 3.0);
        }
        let single = one_row(vec![0.2, 0.4, 0.9], &[(1, -7.0)]);
        let est = row_regression_baseline(&single, 2.0).unwrap();
        assert!(est.values.iter().all(|&x| x == -7.0));
    }

    #[test]
    fn baseline_bias_bound_noiseless() {
        let cfg = SynthConfig::new(LatentFunction::F3, 20, 400, 1.0, 0.0, SeedSpec::new(2));
        let (truth, ds) = generate(&cfg).unwrap();
        let h = 0.02;
        let est = row_regression_baseline(&ds, h).unwrap();
        let mse = (&est.values - &truth.truth).mapv(|x| x * x).mean().unwrap();
        let l = truth.smoothness.lipschitz;
        assert!(mse <= l * l * (h / 2.0).powi(2) + 1e-12, "{mse}");
    }

    #[test]
    fn oracle_wide_windows_give_global_mean() {
        let cfg = SynthConfig::new(LatentFunction::F1, 10, 12, 0.4, 0.2, SeedSpec::new(8));
        let (truth, ds) = generate(&cfg).unwrap();
        let est = oracle_regression(&ds, &truth.row_covariates, 2.0, 2.0).unwrap();
        let g = ds.global_mean();
        assert!(est.values.iter().all(|&x| (x - g).abs() < 1e-12));
        assert!(oracle_regression(&ds, &truth.col_covariates, 0.5, 0.5).is_err());
    }

    #[test]
    fn oracle_recovers_constant() {
        let beta = CovariateSet::from_scalars(vec![0.1, 0.6, 0.9]).unwrap();
        let alpha = CovariateSet::from_scalars(vec![0.2, 0.8]).unwrap();
        let ds = ObservedDataset::from_triplets(2, 3, &[(0, 0, 1.25), (1, 2, 1.25)], beta, 0.0).unwrap();
        let est = oracle_regression(&ds, &alpha, 0.1, 0.1).unwrap();
        assert!(est.values.iter().all(|&x| x == 1.25));
    }

    #[test]
    fn rows_are_independent() {
        let cfg = SynthConfig::new(LatentFunction::F2, 6, 40, 0.5, 0.3, SeedSpec::new(4));
        let (_, ds) = generate(&cfg).unwrap();
        let base = fit_rows(&ds, 0.2).unwrap();
        let mutated = ds.filter(|u, i| u == 2 || i % 3 != 0);
        let fit = fit_rows(&mutated, 0.2).unwrap();
        for i in 0..40 {
            assert_eq!(base.fhat()[[2, i]].to_bits(), fit.fhat()[[2, i]].to_bits());
            assert_eq!(base.weight(2, i), fit.weight(2, i));
        }
    }

    #[test]
    fn row_permutation_equivariance() {
        let cfg = SynthConfig::new(LatentFunction::F1, 7, 30, 0.5, 0.2, SeedSpec::new(5));
        let (_, ds) = generate(&cfg).unwrap();
        let order = [3, 0, 6, 1, 5, 2, 4];
        let a = fit_rows(&ds, 0.15).unwrap();
        let b = fit_rows(&ds.permute_rows(&order), 0.15).unwrap();
        for (r, &u) in order.iter().enumerate() {
            for i in 0..30 {
                assert_eq!(a.weight(u, i), b.weight(r, i));
                assert_eq!(a.value(u, i).map(f64::to_bits), b.value(r, i).map(f64::to_bits));
            }
        }
    }

    proptest! {
        #[test]
        fn weights_monotone_and_range_preserved(
            seed in 0u64..1000,
            h1 in 0.01f64..0.5,
            dh in 0.0f64..0.5,
        ) {
            let cfg = SynthConfig::new(LatentFunction::F3, 5, 25, 0.4, 0.5, SeedSpec::new(seed));
            let (_, ds) = generate(&cfg).unwrap();
            let a = fit_rows(&ds, h1).unwrap();
            let b = fit_rows(&ds, h1 + dh).unwrap();
            for u in 0..5 {
                let (_, vals) = ds.row(u);
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..25 {
                    prop_assert!(a.weight(u, i) <= b.weight(u, i));
                    if let Some(v) = a.value(u, i) {
                        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn constant_rows_are_reproduced(c in -5.0f64..5.0, h in 0.01f64..2.5) {
            let ds = one_row(vec![0.05, 0.3, 0.31, 0.7, 0.95], &[(0, c), (2, c), (3, c), (4, c)]);
            let fit = fit_rows(&ds, h).unwrap();
            for i in 0..5 {
                if let Some(v) = fit.value(0, i) {
                    prop_assert!((v - c).abs() <= 1e-15 * c.abs().max(1.0));
                }
            }
        }
    }
}
