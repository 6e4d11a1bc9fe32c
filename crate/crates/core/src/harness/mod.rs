//! Evaluation: the MSE metric, grid-search tuning, and replicated sweeps.

mod sweep;
mod tune;

pub use sweep::{
    run_sweep, summarize, sweep_n, sweep_p, write_metadata, write_results_csv, write_summary_csv, Axis,
    ExperimentRecord, ExperimentResult, Scale, SummaryRow,
};
pub use tune::{evaluate, fit_method, tune, validation_split, ChosenParams};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{DenseEstimate, GroundTruthInstance};
use crate::error::{Error, Result};

/// Mean squared error over all `n*m` cells, observed or not.
pub fn mse(est: &DenseEstimate, truth: &GroundTruthInstance) -> Result<f64> {
    mse_arrays(&est.values, &truth.truth)
}

pub fn mse_arrays(est: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(Error::Shape {
            expected: truth.dim(),
            actual: est.dim(),
        });
    }
    let total: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(total / est.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneObjective {
    /// Score against the ground truth on every cell.
    Oracle,
    /// Score on a random held-out share of the observed entries.
    Validation,
}

impl std::str::FromStr for TuneObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(TuneObjective::Oracle),
            "validation" => Ok(TuneObjective::Validation),
            _ => Err(Error::config(format!(
                "unknown objective '{s}' (expected oracle or validation)"
            ))),
        }
    }
}

impl std::fmt::Display for TuneObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TuneObjective::Oracle => "oracle",
            TuneObjective::Validation => "validation",
        })
    }
}

/// Search grids. All grids must be non-empty and strictly ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub h_grid: Vec<f64>,
    pub eta2_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub objective: TuneObjective,
    pub val_fraction: f64,
    pub als_ridge_grid: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        let steps: Vec<f64> = (1..=40).map(|k| k as f64 * 5.0 / 1000.0).collect();
        GridSpec {
            h_grid: steps.clone(),
            eta2_grid: steps,
            k_grid: (1..=50).collect(),
            objective: TuneObjective::Validation,
            val_fraction: 0.2,
            als_ridge_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
        }
    }
}

impl GridSpec {
    /// A grid with one point per axis.
    pub fn single(h: f64, eta2: f64, k: usize) -> Self {
        GridSpec {
            h_grid: vec![h],
            eta2_grid: vec![eta2],
            k_grid: vec![k],
            ..GridSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn ascending(name: &str, xs: &[f64], allow_zero: bool) -> Result<()> {
            if xs.is_empty() {
                return Err(Error::config(format!("{name} must not be empty")));
            }
            if xs
                .iter()
                .any(|&x| !x.is_finite() || x < 0.0 || (x == 0.0 && !allow_zero))
            {
                return Err(Error::config(format!("{name} values must be positive and finite")));
            }
            if xs.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config(format!("{name} must be strictly ascending")));
            }
            Ok(())
        }
        ascending("h_grid", &self.h_grid, false)?;
        ascending("eta2_grid", &self.eta2_grid, true)?;
        ascending("als_ridge_grid", &self.als_ridge_grid, true)?;
        let ks: Vec<f64> = self.k_grid.iter().map(|&k| k as f64).collect();
        ascending("k_grid", &ks, false)?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config(format!(
                "val_fraction={} must lie in (0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateSet, Method, Smoothness};
    use crate::synthgen::FunctionId;
    use ndarray::arr2;

    fn truth(values: Array2<f64>) -> GroundTruthInstance {
        let (n, m) = values.dim();
        GroundTruthInstance {
            function: FunctionId::F1,
            row_covariates: CovariateSet::from_scalars(vec![0.0; n]).unwrap(),
            col_covariates: CovariateSet::from_scalars(vec![0.0; m]).unwrap(),
            truth: values,
            smoothness: Smoothness {
                lambda: 1.0,
                lipschitz: 1.0,
            },
        }
    }

    #[test]
    fn mse_examples() {
        let t = truth(arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        let same = DenseEstimate::new(t.truth.clone(), Method::Ours).unwrap();
        assert_eq!(mse(&same, &t).unwrap(), 0.0);
        let shifted = DenseEstimate::new(&t.truth + 0.5, Method::Ours).unwrap();
        assert_eq!(mse(&shifted, &t).unwrap(), 0.25);
        let diag = DenseEstimate::new(&t.truth + &arr2(&[[1.0, 0.0], [0.0, 1.0]]), Method::Ours).unwrap();
        assert_eq!(mse(&diag, &t).unwrap(), 0.5);
        let wrong = DenseEstimate::new(Array2::zeros((2, 3)), Method::Ours).unwrap();
        assert!(matches!(mse(&wrong, &t), Err(Error::Shape { .. })));
    }

    #[test]
    fn mse_permutation_invariant() {
        let a = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.3);
        let b = Array2::from_shape_fn((4, 5), |(i, j)| ((i + 2 * j) % 7) as f64);
        let rows = [2, 0, 3, 1];
        let cols = [4, 1, 0, 3, 2];
        let pa = Array2::from_shape_fn((4, 5), |(i, j)| a[[rows[i], cols[j]]]);
        let pb = Array2::from_shape_fn((4, 5), |(i, j)| b[[rows[i], cols[j]]]);
        let (x, y) = (mse_arrays(&a, &b).unwrap(), mse_arrays(&pa, &pb).unwrap());
        assert!((x - y).abs() < 1e-14);
    }

    #[test]
    fn default_grids() {
        let g = GridSpec::default();
        g.validate().unwrap();
        assert_eq!(g.h_grid.len(), 40);
        assert!((g.h_grid[0] - 0.005).abs() < 1e-15 && (g.h_grid[39] - 0.2).abs() < 1e-15);
        assert_eq!(g.k_grid, (1..=50).collect::<Vec<_>>());
        assert_eq!(g.objective, TuneObjective::Validation);
    }

    #[test]
    fn invalid_grids() {
        let bad = [
            GridSpec { h_grid: vec![], ..GridSpec::default() },
            GridSpec { h_grid: vec![0.1, 0.05], ..GridSpec::default() },
            GridSpec { eta2_grid: vec![-0.1], ..GridSpec::default() },
            GridSpec { k_grid: vec![0, 1], ..GridSpec::default() },
            GridSpec { val_fraction: 1.0, ..GridSpec::default() },
        ];
        for g in bad {
            assert!(g.validate().is_err(), "{g:?}");
        }
    }

    #[test]
    fn grid_json_rejects_unknown_keys() {
        let err = serde_json::from_str::<GridSpec>(r#"{"h_grid":[0.1],"hgrid":[0.2]}"#).unwrap_err();
        assert!(err.to_string().contains("hgrid"));
        let g: GridSpec = serde_json::from_str(r#"{"objective":"oracle"}"#).unwrap();
        assert_eq!(g.objective, TuneObjective::Oracle);
    }
}
