//! Low-rank matrix completion baselines that ignore the covariates.

mod als;
mod softimpute;

pub use als::{als_factorize, als_fit, AlsConfig, AlsFit};
pub use softimpute::{
    default_lambda_grid, softimpute_fit, softimpute_objective, softimpute_path, softimpute_step,
    SoftImputeConfig,
};

use nalgebra::DMatrix;
use ndarray::Array2;

pub(crate) fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}
