use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DenseEstimate, Method, ObservedDataset};
use crate::error::{Error, Result};
use crate::rng::{self, stage, SeedSpec};

const RIDGE_FLOOR: f64 = 1e-10;

/// Rank-`r` alternating least squares with an l2 penalty on both factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub rank: usize,
    pub ridge: f64,
    pub max_sweeps: usize,
    /// Stop once the relative objective change over a sweep drops below this.
    pub tol: f64,
    pub seed: SeedSpec,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            rank: 2,
            ridge: 1e-3,
            max_sweeps: 200,
            tol: 1e-6,
            seed: SeedSpec::new(0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlsFit {
    pub row_factors: Array2<f64>,
    pub col_factors: Array2<f64>,
    /// Objective after initialisation and after every half-sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
}

impl AlsFit {
    pub fn reconstruct(&self) -> Array2<f64> {
        self.row_factors.dot(&self.col_factors.t())
    }
}

fn objective(ds: &ObservedDataset, u: &Array2<f64>, v: &Array2<f64>, ridge: f64) -> f64 {
    let mut loss = 0.0;
    for (r, c, x) in ds.triplets() {
        let pred: f64 = u.row(r).dot(&v.row(c));
        loss += (x - pred) * (x - pred);
    }
    loss + ridge * (u.iter().map(|a| a * a).sum::<f64>() + v.iter().map(|a| a * a).sum::<f64>())
}

/// Solves `(sum_k f_k f_k^T + ridge I) w = sum_k x_k f_k` for each target.
fn solve_side(
    entries: &[Vec<(usize, f64)>],
    fixed: &Array2<f64>,
    ridge: f64,
) -> Array2<f64> {
    let rank = fixed.ncols();
    let rows: Vec<Vec<f64>> = entries
        .par_iter()
        .map(|obs| {
            let mut a = DMatrix::<f64>::identity(rank, rank) * ridge;
            let mut b = DVector::<f64>::zeros(rank);
            for &(k, x) in obs {
                let f = fixed.row(k);
                for p in 0..rank {
                    b[p] += x * f[p];
                    for q in 0..rank {
                        a[(p, q)] += f[p] * f[q];
                    }
                }
            }
            let sol = match a.clone().cholesky() {
                Some(ch) => ch.solve(&b),
                None => {
                    let floored = a + DMatrix::<f64>::identity(rank, rank) * RIDGE_FLOOR;
                    floored
                        .cholesky()
                        .map(|ch| ch.solve(&b))
                        .unwrap_or_else(|| DVector::zeros(rank))
                }
            };
            sol.iter().copied().collect()
        })
        .collect();
    Array2::from_shape_fn((entries.len(), rank), |(i, p)| rows[i][p])
}

/// Alternates exact ridge solves for the row factors and the column factors,
/// starting from seeded uniform(-0.01, 0.01) column factors.
pub fn als_factorize(ds: &ObservedDataset, cfg: &AlsConfig) -> Result<AlsFit> {
    let (n, m) = (ds.n(), ds.m());
    if cfg.rank == 0 || cfg.rank > n.min(m) {
        return Err(Error::config(format!(
            "ALS rank {} must lie in [1, {}]",
            cfg.rank,
            n.min(m)
        )));
    }
    if !(cfg.ridge >= 0.0 && cfg.ridge.is_finite()) {
        return Err(Error::config(format!("ALS ridge {} must be >= 0", cfg.ridge)));
    }
    let mut by_row = vec![Vec::new(); n];
    let mut by_col = vec![Vec::new(); m];
    for (r, c, x) in ds.triplets() {
        by_row[r].push((c, x));
        by_col[c].push((r, x));
    }
    let mut rng = cfg.seed.with_stage(stage::ALS_INIT).rng();
    let mut init = |rows: usize| {
        Array2::from_shape_simple_fn((rows, cfg.rank), || 0.02 * rng::unit(&mut rng) - 0.01)
    };
    let mut u = init(n);
    let mut v = init(m);
    let mut trace = vec![objective(ds, &u, &v, cfg.ridge)];
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        let before = *trace.last().unwrap();
        u = solve_side(&by_row, &v, cfg.ridge);
        trace.push(objective(ds, &u, &v, cfg.ridge));
        v = solve_side(&by_col, &u, cfg.ridge);
        let after = objective(ds, &u, &v, cfg.ridge);
        trace.push(after);
        sweeps += 1;
        let change = (before - after).abs() / before.abs().max(f64::MIN_POSITIVE);
        if change < cfg.tol {
            break;
        }
    }
    Ok(AlsFit {
        row_factors: u,
        col_factors: v,
        objective_trace: trace,
        sweeps,
    })
}

pub fn als_fit(ds: &ObservedDataset, cfg: &AlsConfig) -> Result<DenseEstimate> {
    let fit = als_factorize(ds, cfg)?;
    DenseEstimate::new(fit.reconstruct(), Method::Als)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateSet;
    use crate::synthgen::{generate, LatentFunction, SynthConfig};

    fn full(values: &Array2<f64>) -> ObservedDataset {
        let (n, m) = values.dim();
        let trips: Vec<_> = (0..n)
            .flat_map(|u| (0..m).map(move |i| (u, i)))
            .map(|(u, i)| (u, i, values[[u, i]]))
            .collect();
        let beta = CovariateSet::from_scalars(vec![0.5; m]).unwrap();
        ObservedDataset::from_triplets(n, m, &trips, beta, 0.0).unwrap()
    }

    #[test]
    fn recovers_exact_rank_one() {
        let a: Vec<f64> = (0..8).map(|i| 1.0 + 0.3 * i as f64).collect();
        let b: Vec<f64> = (0..11).map(|j| (j as f64 * 0.7).sin() + 2.0).collect();
        let x = Array2::from_shape_fn((8, 11), |(i, j)| a[i] * b[j]);
        let cfg = AlsConfig {
            rank: 1,
            ridge: 0.0,
            max_sweeps: 500,
            tol: 1e-14,
            seed: SeedSpec::new(3),
        };
        let est = als_fit(&full(&x), &cfg).unwrap();
        let err = (&est.values - &x).mapv(|d| d * d).sum().sqrt();
        let norm = x.mapv(|d| d * d).sum().sqrt();
        assert!(err / norm <= 1e-6, "relative error {}", err / norm);
    }

    #[test]
    fn objective_never_increases() {
        let (_, ds) = generate(&SynthConfig::new(LatentFunction::F1, 30, 60, 0.2, 0.2, SeedSpec::new(5))).unwrap();
        let fit = als_factorize(&ds, &AlsConfig::default()).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let ds = full(&Array2::zeros((4, 5)));
        let est = als_fit(&ds, &AlsConfig::default()).unwrap();
        assert!(est.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_and_validated() {
        let (_, ds) = generate(&SynthConfig::new(LatentFunction::F2, 10, 20, 0.3, 0.2, SeedSpec::new(6))).unwrap();
        let cfg = AlsConfig::default();
        assert_eq!(als_fit(&ds, &cfg).unwrap(), als_fit(&ds, &cfg).unwrap());
        assert!(als_fit(&ds, &AlsConfig { rank: 0, ..cfg }).is_err());
        assert!(als_fit(&ds, &AlsConfig { rank: 11, ..cfg }).is_err());
        assert!(als_fit(&ds, &AlsConfig { ridge: -1.0, ..cfg }).is_err());
    }
}
