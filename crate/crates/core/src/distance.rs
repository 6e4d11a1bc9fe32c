//! Debiased pairwise row distances computed from the per-row smoothers,
//! plus the noiseless reference quantities used to check them.
//!
//! For rows `u != v` the estimate is
//!
//! ```text
//! dsq(u, v) = (1/c) * sum_i (fhat(u,i) - fhat(v,i))^2  -  xi2(u, v)
//! xi2(u, v) = (sigma^2 / c) * sum_i sum_l (E_ul / W_ui^2 + E_vl / W_vi^2) K^2((beta_l - beta_i)/h)
//! ```
//!
//! where both sums over `i` run over the `c` columns at which both rows have
//! a non-empty window. Because `K` is an indicator, the inner sum over `l`
//! collapses to `W_ui`, so the hot loop uses `xi2 = (sigma^2/c) * sum_i
//! (1/W_ui + 1/W_vi)`; [`xi_correction`] keeps the literal double sum.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{GroundTruthInstance, ObservationMask, ObservedDataset, CovariateSet};
use crate::error::{Error, Result};
use crate::kernel::{fit_rows, rect_kernel_between, RowRegressionFit};

/// Symmetric matrix of debiased squared-distance estimates.
///
/// Off-diagonal entries may be negative. A pair with no shared valid column
/// is incomparable: its `dsq` is stored as zero and [`Self::comparable`]
/// reports `false`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowDistanceMatrix {
    dsq: Array2<f64>,
    valid: Array2<u32>,
}

impl RowDistanceMatrix {
    pub fn n(&self) -> usize {
        self.dsq.nrows()
    }

    pub fn dsq(&self, u: usize, v: usize) -> f64 {
        self.dsq[[u, v]]
    }

    /// Number of columns that entered the pair's average.
    pub fn valid_cols(&self, u: usize, v: usize) -> u32 {
        self.valid[[u, v]]
    }

    pub fn comparable(&self, u: usize, v: usize) -> bool {
        u == v || self.valid[[u, v]] > 0
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.dsq
    }

    /// Writes `u,v,dsq` for every pair `u < v`; incomparable pairs have an
    /// empty `dsq` field.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "u,v,dsq")?;
            for u in 0..self.n() {
                for v in u + 1..self.n() {
                    if self.comparable(u, v) {
                        writeln!(out, "{u},{v},{:.16e}", self.dsq[[u, v]])?;
                    } else {
                        writeln!(out, "{u},{v},")?;
                    }
                }
            }
            out.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    /// Reorders rows and columns so that new index `r` is old `order[r]`.
    pub fn permuted(&self, order: &[usize]) -> RowDistanceMatrix {
        let n = self.n();
        RowDistanceMatrix {
            dsq: Array2::from_shape_fn((n, n), |(a, b)| self.dsq[[order[a], order[b]]]),
            valid: Array2::from_shape_fn((n, n), |(a, b)| self.valid[[order[a], order[b]]]),
        }
    }
}

/// The noise-bias correction `xi2(u, v)`, evaluated as the literal double
/// sum over valid columns `i` and observed columns `l`.
pub fn xi_correction(
    fit: &RowRegressionFit,
    mask: &ObservationMask,
    beta: &CovariateSet,
    sigma: f64,
    u: usize,
    v: usize,
) -> f64 {
    let h = fit.bandwidth();
    let (mut total, mut count) = (0.0, 0u32);
    for i in 0..fit.m() {
        let (wu, wv) = (fit.weight(u, i), fit.weight(v, i));
        if wu == 0 || wv == 0 {
            continue;
        }
        count += 1;
        for (row, w) in [(u, wu), (v, wv)] {
            let w2 = (w as f64) * (w as f64);
            for &l in mask.row(row) {
                if rect_kernel_between(beta.point(l), beta.point(i), h) {
                    total += 1.0 / w2;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sigma * sigma * total / count as f64
    }
}

/// Debiased squared distances between all row pairs.
///
/// Each pair is reduced by exactly one worker in ascending column order, so
/// the output does not depend on scheduling.
pub fn estimate_distances(fit: &RowRegressionFit, sigma: f64) -> RowDistanceMatrix {
    let (n, m) = (fit.n(), fit.m());
    let inv_w: Vec<Vec<f64>> = (0..n)
        .map(|u| {
            (0..m)
                .map(|i| match fit.weight(u, i) {
                    0 => 0.0,
                    w => 1.0 / w as f64,
                })
                .collect()
        })
        .collect();
    let s2 = sigma * sigma;
    let upper: Vec<Vec<(f64, u32)>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let fu = fit.fhat().row(u);
            let wu = &inv_w[u];
            (u + 1..n)
                .map(|v| {
                    let fv = fit.fhat().row(v);
                    let wv = &inv_w[v];
                    let (mut sq, mut xi, mut c) = (0.0, 0.0, 0u32);
                    for i in 0..m {
                        if wu[i] > 0.0 && wv[i] > 0.0 {
                            let d = fu[i] - fv[i];
                            sq += d * d;
                            xi += wu[i] + wv[i];
                            c += 1;
                        }
                    }
                    if c == 0 {
                        (0.0, 0)
                    } else {
                        let c_f = c as f64;
                        (sq / c_f - s2 * xi / c_f, c)
                    }
                })
                .collect()
        })
        .collect();
    let mut dsq = Array2::zeros((n, n));
    let mut valid = Array2::zeros((n, n));
    for u in 0..n {
        valid[[u, u]] = (0..m).filter(|&i| fit.weight(u, i) > 0).count() as u32;
    }
    for (u, row) in upper.into_iter().enumerate() {
        for (k, (d, c)) in row.into_iter().enumerate() {
            let v = u + 1 + k;
            dsq[[u, v]] = d;
            dsq[[v, u]] = d;
            valid[[u, v]] = c;
            valid[[v, u]] = c;
        }
    }
    RowDistanceMatrix { dsq, valid }
}

fn noiseless_dataset(truth: &GroundTruthInstance, mask: &ObservationMask) -> Result<ObservedDataset> {
    if (mask.n(), mask.m()) != truth.truth.dim() {
        return Err(Error::Shape {
            expected: truth.truth.dim(),
            actual: (mask.n(), mask.m()),
        });
    }
    let values = (0..mask.n())
        .map(|u| mask.row(u).iter().map(|&j| truth.truth[[u, j]]).collect())
        .collect();
    ObservedDataset::from_parts(mask.clone(), values, truth.col_covariates.clone(), 0.0)
}

/// The per-row smoother applied to noiseless values `f(alpha_u, beta_j)` on
/// the same mask: identical windows and weights as [`fit_rows`].
pub fn oracle_smoothed_fit(
    truth: &GroundTruthInstance,
    mask: &ObservationMask,
    h: f64,
) -> Result<RowRegressionFit> {
    fit_rows(&noiseless_dataset(truth, mask)?, h)
}

/// Squared distance between the noiseless smoothed rows `u` and `v`,
/// averaged over the columns valid for both rows. Computed directly from the
/// ground truth, independently of the fitted smoother.
pub fn oracle_smoothed_distance_sq(
    truth: &GroundTruthInstance,
    mask: &ObservationMask,
    h: f64,
    u: usize,
    v: usize,
) -> f64 {
    let beta = &truth.col_covariates;
    let smooth = |row: usize, i: usize| -> Option<f64> {
        let (mut s, mut w) = (0.0, 0u32);
        for &j in mask.row(row) {
            if rect_kernel_between(beta.point(i), beta.point(j), h) {
                s += truth.truth[[row, j]];
                w += 1;
            }
        }
        (w > 0).then(|| s / w as f64)
    };
    if u == v {
        return 0.0;
    }
    let (mut sq, mut c) = (0.0, 0u32);
    for i in 0..truth.m() {
        if let (Some(a), Some(b)) = (smooth(u, i), smooth(v, i)) {
            sq += (a - b) * (a - b);
            c += 1;
        }
    }
    if c == 0 {
        0.0
    } else {
        sq / c as f64
    }
}

/// `(1/m) * sum_l (f(alpha_u, beta_l) - f(alpha_v, beta_l))^2` over all columns.
pub fn true_distance_sq(truth: &GroundTruthInstance, u: usize, v: usize) -> f64 {
    let a = truth.truth.row(u);
    let b = truth.truth.row(v);
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / truth.m() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSpec;
    use crate::synthgen::{generate, LatentFunction, SynthConfig};

    fn instance(f: LatentFunction, n: usize, m: usize, p: f64, sigma: f64, seed: u64) -> (GroundTruthInstance, ObservedDataset) {
        generate(&SynthConfig::new(f, n, m, p, sigma, SeedSpec::new(seed))).unwrap()
    }

    #[test]
    fn xi_is_zero_without_noise() {
        let (_, ds) = instance(LatentFunction::F1, 4, 30, 0.5, 0.2, 1);
        let fit = fit_rows(&ds, 0.2).unwrap();
        assert_eq!(xi_correction(&fit, ds.mask(), ds.beta(), 0.0, 0, 1), 0.0);
    }

    #[test]
    fn xi_single_column() {
        let beta = CovariateSet::from_scalars(vec![0.4]).unwrap();
        let ds = ObservedDataset::from_triplets(2, 1, &[(0, 0, 1.0), (1, 0, 2.0)], beta, 0.3).unwrap();
        let fit = fit_rows(&ds, 0.01).unwrap();
        let xi = xi_correction(&fit, ds.mask(), ds.beta(), 0.3, 0, 1);
        assert!((xi - 2.0 * 0.09).abs() < 1e-15);
    }

    #[test]
    fn xi_full_row_contribution() {
        // row 0 fully observed, row 1 observes only column 0; with h >= 2 every
        // window is everything, so W_0i = 4 and W_1i = 1 for all i
        let beta = CovariateSet::from_scalars(vec![0.0, 0.2, 0.6, 1.0]).unwrap();
        let trips = [(0, 0, 1.0), (0, 1, 2.0), (0, 2, 3.0), (0, 3, 4.0), (1, 0, 0.0)];
        let ds = ObservedDataset::from_triplets(2, 4, &trips, beta, 1.0).unwrap();
        let fit = fit_rows(&ds, 2.0).unwrap();
        let xi = xi_correction(&fit, ds.mask(), ds.beta(), 1.0, 0, 1);
        // u part: (1/4) * 4 * 4 / 16 = 1/4; v part: (1/4) * 4 * 1 = 1
        assert!((xi - 1.25).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_literal_xi() {
        let (_, ds) = instance(LatentFunction::F3, 6, 80, 0.3, 0.2, 2);
        let fit = fit_rows(&ds, 0.1).unwrap();
        let d = estimate_distances(&fit, 0.2);
        let d0 = estimate_distances(&fit, 0.0);
        for u in 0..6 {
            for v in 0..6 {
                if u == v || !d.comparable(u, v) {
                    continue;
                }
                let xi = xi_correction(&fit, ds.mask(), ds.beta(), 0.2, u, v);
                let got = d0.dsq(u, v) - d.dsq(u, v);
                assert!((got - xi).abs() < 1e-13, "{got} vs {xi}");
            }
        }
    }

    #[test]
    fn symmetric_with_zero_diagonal() {
        let (_, ds) = instance(LatentFunction::F2, 12, 60, 0.2, 0.3, 3);
        let d = estimate_distances(&fit_rows(&ds, 0.2).unwrap(), 0.3);
        for u in 0..12 {
            assert_eq!(d.dsq(u, u), 0.0);
            for v in 0..12 {
                assert_eq!(d.dsq(u, v).to_bits(), d.dsq(v, u).to_bits());
                assert!(d.dsq(u, v).is_finite());
            }
        }
    }

    #[test]
    fn identical_rows_have_zero_distance() {
        let beta = CovariateSet::from_scalars(vec![0.1, 0.4, 0.8]).unwrap();
        let trips = [(0, 0, 1.0), (0, 2, 3.0), (1, 0, 1.0), (1, 2, 3.0)];
        let ds = ObservedDataset::from_triplets(2, 3, &trips, beta, 0.0).unwrap();
        let d = estimate_distances(&fit_rows(&ds, 0.5).unwrap(), 0.0);
        assert_eq!(d.dsq(0, 1), 0.0);
    }

    #[test]
    fn incomparable_pairs_flagged() {
        let beta = CovariateSet::from_scalars(vec![0.0, 1.0]).unwrap();
        let ds = ObservedDataset::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 2.0)], beta, 0.1).unwrap();
        let d = estimate_distances(&fit_rows(&ds, 0.5).unwrap(), 0.1);
        assert!(!d.comparable(0, 1));
        assert!(!d.comparable(0, 2));
        assert!(d.comparable(2, 2));
        assert_eq!(d.valid_cols(0, 0), 1);
    }

    #[test]
    fn noiseless_path_equals_oracle_exactly() {
        let (truth, ds) = instance(LatentFunction::F3, 8, 50, 0.4, 0.0, 4);
        let fit = fit_rows(&ds, 0.15).unwrap();
        let tilde = oracle_smoothed_fit(&truth, ds.mask(), 0.15).unwrap();
        assert_eq!(fit.weights(), tilde.weights());
        let bits = |f: &RowRegressionFit| f.fhat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&fit), bits(&tilde));
        let d = estimate_distances(&fit, 0.0);
        for u in 0..8 {
            for v in 0..8 {
                assert!(d.dsq(u, v) >= 0.0);
                let o = oracle_smoothed_distance_sq(&truth, ds.mask(), 0.15, u, v);
                assert_eq!(d.dsq(u, v).to_bits(), o.to_bits(), "({u},{v})");
            }
        }
    }

    #[test]
    fn smoothed_fit_holder_bias() {
        let (truth, ds) = instance(LatentFunction::F3, 5, 300, 0.5, 0.0, 6);
        let h = 0.1;
        let tilde = oracle_smoothed_fit(&truth, ds.mask(), h).unwrap();
        // only beta varies inside a row: its Lipschitz constant is 8
        for u in 0..5 {
            for i in 0..300 {
                if let Some(v) = tilde.value(u, i) {
                    assert!((v - truth.truth[[u, i]]).abs() <= 8.0 * h / 2.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn true_distance_lipschitz_in_alpha() {
        let (truth, _) = instance(LatentFunction::F3, 40, 200, 0.1, 0.0, 7);
        let l = truth.smoothness.lipschitz;
        for u in 0..40 {
            assert_eq!(true_distance_sq(&truth, u, u), 0.0);
            for v in 0..40 {
                let gap = truth.row_covariates.linf(u, v);
                let d = true_distance_sq(&truth, u, v).sqrt();
                assert!(d <= 6.0 * gap + 1e-12);
                assert!(d <= l * gap + 1e-12);
                assert_eq!(true_distance_sq(&truth, u, v), true_distance_sq(&truth, v, u));
            }
        }
    }

    #[test]
    fn oracle_distance_symmetric() {
        let (truth, ds) = instance(LatentFunction::F1, 5, 40, 0.5, 0.1, 8);
        for u in 0..5 {
            assert_eq!(oracle_smoothed_distance_sq(&truth, ds.mask(), 0.2, u, u), 0.0);
            for v in 0..5 {
                assert_eq!(
                    oracle_smoothed_distance_sq(&truth, ds.mask(), 0.2, u, v),
                    oracle_smoothed_distance_sq(&truth, ds.mask(), 0.2, v, u)
                );
            }
        }
    }

    #[test]
    fn csv_dump() {
        let (_, ds) = instance(LatentFunction::F1, 3, 10, 1.0, 0.1, 9);
        let d = estimate_distances(&fit_rows(&ds, 0.3).unwrap(), 0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "u,v,dsq");
        assert_eq!(lines.len(), 4);
        let parsed: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, d.dsq(0, 1));
    }
}
