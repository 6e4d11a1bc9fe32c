//! Synthetic instances: uniform covariates, a latent function, Bernoulli
//! sampling and additive Gaussian noise.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{CovariateSet, GroundTruthInstance, ObservationMask, ObservedDataset, Smoothness};
use crate::error::{Error, Result};
use crate::rng::{self, stage, SeedSpec};

/// Name of a latent function. `Custom` carries a user label.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum FunctionId {
    F1,
    F2,
    F3,
    Custom(String),
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionId::F1 => f.write_str("f1"),
            FunctionId::F2 => f.write_str("f2"),
            FunctionId::F3 => f.write_str("f3"),
            FunctionId::Custom(name) => f.write_str(name),
        }
    }
}

impl FromStr for FunctionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(FunctionId::F1),
            "f2" => Ok(FunctionId::F2),
            "f3" => Ok(FunctionId::F3),
            "" => Err(Error::config("empty function id")),
            _ => Ok(FunctionId::Custom(s.to_string())),
        }
    }
}

impl Serialize for FunctionId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FunctionId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

type Evaluator = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// A user-supplied latent function for library callers.
#[derive(Clone)]
pub struct CustomFunction {
    pub name: String,
    pub d1: usize,
    pub d2: usize,
    pub smoothness: Smoothness,
    eval: Arc<Evaluator>,
}

impl CustomFunction {
    pub fn new(
        name: impl Into<String>,
        d1: usize,
        d2: usize,
        smoothness: Smoothness,
        eval: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CustomFunction {
            name: name.into(),
            d1,
            d2,
            smoothness,
            eval: Arc::new(eval),
        }
    }
}

impl fmt::Debug for CustomFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunction")
            .field("name", &self.name)
            .field("d1", &self.d1)
            .field("d2", &self.d2)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum LatentFunction {
    F1,
    F2,
    F3,
    Custom(CustomFunction),
}

impl LatentFunction {
    pub fn from_id(id: &FunctionId) -> Result<Self> {
        match id {
            FunctionId::F1 => Ok(LatentFunction::F1),
            FunctionId::F2 => Ok(LatentFunction::F2),
            FunctionId::F3 => Ok(LatentFunction::F3),
            FunctionId::Custom(name) => Err(Error::config(format!(
                "unknown latent function '{name}' (expected f1, f2 or f3)"
            ))),
        }
    }

    pub fn id(&self) -> FunctionId {
        match self {
            LatentFunction::F1 => FunctionId::F1,
            LatentFunction::F2 => FunctionId::F2,
            LatentFunction::F3 => FunctionId::F3,
            LatentFunction::Custom(c) => FunctionId::Custom(c.name.clone()),
        }
    }

    /// Declared Holder parameters with respect to the joint infinity norm on
    /// `(alpha, beta)`. For the built-ins, `L` is the sum of the sup-norms of
    /// the two partial derivatives.
    pub fn smoothness(&self) -> Smoothness {
        let lipschitz = match self {
            // 5 + 0.05*3*25 in each argument
            LatentFunction::F1 => 17.5,
            // alpha: 10 + 0.2*3*40, beta: 4 + 0.2*3*40
            LatentFunction::F2 => 62.0,
            // alpha: 6, beta: 8
            LatentFunction::F3 => 14.0,
            LatentFunction::Custom(c) => return c.smoothness,
        };
        Smoothness {
            lambda: 1.0,
            lipschitz,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            LatentFunction::Custom(c) => (c.d1, c.d2),
            _ => (1, 1),
        }
    }

    pub fn eval(&self, alpha: &[f64], beta: &[f64]) -> f64 {
        match self {
            LatentFunction::F1 => f1(alpha[0], beta[0]),
            LatentFunction::F2 => f2(alpha[0], beta[0]),
            LatentFunction::F3 => f3(alpha[0], beta[0]),
            LatentFunction::Custom(c) => (c.eval)(alpha, beta),
        }
    }
}

fn f1(a: f64, b: f64) -> f64 {
    (5.0 * a).sin() * (5.0 * b).sin() + 0.05 * ((25.0 * a).sin() * (25.0 * b).sin()).powi(3)
}

fn f2(a: f64, b: f64) -> f64 {
    (10.0 * a).sin() * (4.0 * b).sin() + 0.2 * ((40.0 * a).sin() * (40.0 * b).sin()).powi(3)
}

fn f3(a: f64, b: f64) -> f64 {
    (3.0 + 6.0 * a + 4.0 * b * b).sin()
}

/// Evaluates a built-in latent function by id.
pub fn latent_f(id: &FunctionId, alpha: &[f64], beta: &[f64]) -> Result<f64> {
    let f = LatentFunction::from_id(id)?;
    if alpha.len() != 1 || beta.len() != 1 {
        return Err(Error::config(format!(
            "{id} is defined for scalar covariates, got dimensions {} and {}",
            alpha.len(),
            beta.len()
        )));
    }
    Ok(f.eval(alpha, beta))
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub d1: usize,
    pub d2: usize,
    pub p: f64,
    pub sigma: f64,
    pub function: LatentFunction,
    pub seed: SeedSpec,
}

impl SynthConfig {
    pub fn new(function: LatentFunction, n: usize, m: usize, p: f64, sigma: f64, seed: SeedSpec) -> Self {
        let (d1, d2) = function.dims();
        SynthConfig {
            n,
            m,
            d1,
            d2,
            p,
            sigma,
            function,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::config(format!(
                "matrix must be at least 1x1, got {}x{}",
                self.n, self.m
            )));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::config(format!("p={} must lie in (0, 1]", self.p)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma={} must be >= 0", self.sigma)));
        }
        if self.d1 == 0 || self.d2 == 0 {
            return Err(Error::config("covariate dimensions must be at least 1"));
        }
        if self.function.dims() != (self.d1, self.d2) {
            let (a, b) = self.function.dims();
            return Err(Error::config(format!(
                "{} expects covariate dimensions ({a}, {b}), config has ({}, {})",
                self.function.id(),
                self.d1,
                self.d2
            )));
        }
        Ok(())
    }
}

/// Draws a ground-truth instance and its noisy, sparsely observed dataset.
///
/// Row `u`'s sampling mask and noise come from substream `u` of their own
/// stages, so rows are generated independently and in parallel.
pub fn generate(cfg: &SynthConfig) -> Result<(GroundTruthInstance, ObservedDataset)> {
    cfg.validate()?;
    let draw_points = |count: usize, dim: usize, st: u64| {
        let mut rng = cfg.seed.with_stage(st).rng();
        (0..count * dim).map(|_| rng::unit(&mut rng)).collect::<Vec<_>>()
    };
    let alpha = CovariateSet::new(cfg.d1, draw_points(cfg.n, cfg.d1, stage::ROW_COVARIATES))?;
    let beta = CovariateSet::new(cfg.d2, draw_points(cfg.m, cfg.d2, stage::COL_COVARIATES))?;

    let cells: Vec<f64> = (0..cfg.n)
        .into_par_iter()
        .flat_map_iter(|u| (0..cfg.m).map(move |i| (u, i)).collect::<Vec<_>>())
        .map(|(u, i)| cfg.function.eval(alpha.point(u), beta.point(i)))
        .collect();
    let truth = Array2::from_shape_vec((cfg.n, cfg.m), cells).expect("n*m cells");

    let observe_seed = cfg.seed.with_stage(stage::OBSERVATIONS);
    let noise_seed = cfg.seed.with_stage(stage::NOISE);
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..cfg.n)
        .into_par_iter()
        .map(|u| {
            let mut pick = observe_seed.substream(u as u64);
            let mut noise = noise_seed.substream(u as u64);
            let cols: Vec<usize> = (0..cfg.m).filter(|_| rng::unit(&mut pick) < cfg.p).collect();
            let vals = cols
                .iter()
                .map(|&i| truth[[u, i]] + cfg.sigma * rng::standard_normal(&mut noise))
                .collect();
            (cols, vals)
        })
        .collect();

    let mask = ObservationMask::new(
        cfg.n,
        cfg.m,
        rows.iter()
            .enumerate()
            .flat_map(|(u, (cols, _))| cols.iter().map(move |&i| (u, i))),
    )?;
    let values = rows.into_iter().map(|(_, v)| v).collect();
    let dataset = ObservedDataset::from_parts(mask, values, beta.clone(), cfg.sigma)?;
    let instance = GroundTruthInstance {
        function: cfg.function.id(),
        row_covariates: alpha,
        col_covariates: beta,
        truth,
        smoothness: cfg.function.smoothness(),
    };
    Ok((instance, dataset))
}
