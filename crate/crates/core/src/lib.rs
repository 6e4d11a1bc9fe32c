//! Nonparametric matrix estimation when only the columns carry observed
//! covariates.
//!
//! The estimator smooths every row over the column covariates, turns the
//! smoothed rows into noise-debiased squared distances between rows, and
//! predicts each entry by averaging observations over a nearest-neighbor
//! block of similar rows and nearby columns. Alongside it the crate ships a
//! synthetic data generator, classical baselines, a tuning and sweep harness,
//! and the `onesided-mc` command-line tool.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod distance;
pub mod error;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod neighborhood;
pub mod nn;
pub mod rng;
pub mod synthgen;
pub mod theory;

pub use data::{
    split_mask, CovariateSet, DenseEstimate, GroundTruthInstance, Method, ObservationMask, ObservedDataset,
    Smoothness,
};
pub use distance::{estimate_distances, RowDistanceMatrix};
pub use error::{Error, Result};
pub use kernel::{fit_rows, oracle_regression, row_regression_baseline, RowRegressionFit};
pub use nn::{full_pipeline, nn_predict, NeighborhoodSpec, PipelineConfig, RowRule};
pub use rng::SeedSpec;
pub use synthgen::{generate, FunctionId, LatentFunction, SynthConfig};
pub use theory::{theory_params, Regime, TheoryInputs, TheoryParams};
