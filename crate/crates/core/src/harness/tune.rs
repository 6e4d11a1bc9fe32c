//! Grid-search tuning.
//!
//! Every candidate is scored on a set of target cells: held-out observed
//! entries in validation mode, or every cell against the truth in oracle mode.
//! The neighborhood methods are scored for a whole grid at once. For a target
//! `(u, i)` each contributing observation falls in the first grid cell whose
//! window admits it, so a cumulative histogram over those cells yields the
//! block average for every grid point.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GridSpec, TuneObjective};
use crate::baselines::{als_fit, default_lambda_grid, softimpute_path, AlsConfig, SoftImputeConfig};
use crate::data::{DenseEstimate, GroundTruthInstance, Method, ObservedDataset};
use crate::distance::estimate_distances;
use crate::error::{Error, Result};
use crate::kernel::{fit_rows, oracle_regression, rect_kernel_between, row_regression_baseline};
use crate::nn::{full_pipeline, ranked_neighbors, NeighborhoodSpec, PipelineConfig};
use crate::rng::{stage, SeedSpec};

/// Hyperparameters picked for one method. Fields a method does not use are
/// `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChosenParams {
    /// Column bandwidth (row smoother, or the column side of the oracle).
    pub h: Option<f64>,
    pub eta2: Option<f64>,
    pub k: Option<usize>,
    pub eta1: Option<f64>,
    /// Row-covariate bandwidth of the oracle.
    pub h_row: Option<f64>,
    pub ridge: Option<f64>,
    pub lambda: Option<f64>,
    /// Mean squared error of the chosen point on the tuning targets.
    pub tuning_score: f64,
}

/// Targets grouped by row: `(u, [(i, y)])`, rows and columns ascending.
type Targets = Vec<(usize, Vec<(usize, f64)>)>;

fn group(mut cells: Vec<(usize, usize, f64)>) -> Targets {
    cells.sort_by_key(|c| (c.0, c.1));
    let mut out: Targets = Vec::new();
    for (u, i, y) in cells {
        match out.last_mut() {
            Some((v, list)) if *v == u => list.push((i, y)),
            _ => out.push((u, vec![(i, y)])),
        }
    }
    out
}

/// Holds out `round(fraction * |E|)` observed entries chosen uniformly at
/// random. Returns the remaining data and the held-out `(u, i, x)` triplets.
pub fn validation_split(
    ds: &ObservedDataset,
    fraction: f64,
    seed: SeedSpec,
) -> (ObservedDataset, Vec<(usize, usize, f64)>) {
    let all: Vec<(usize, usize, f64)> = ds.triplets().collect();
    let count = (fraction * all.len() as f64).round() as usize;
    let mut rng = seed.with_stage(stage::VALIDATION).rng();
    let mut picked = sample(&mut rng, all.len(), count.min(all.len())).into_vec();
    picked.sort_unstable();
    let m = ds.m();
    let mut held = vec![false; ds.n() * m];
    let cells: Vec<_> = picked.into_iter().map(|k| all[k]).collect();
    for &(u, i, _) in &cells {
        held[u * m + i] = true;
    }
    (ds.filter(|u, i| !held[u * m + i]), cells)
}

/// In-place 2-D inclusive prefix sums over a row-major `rows x cols` table.
fn cumulate(sum: &mut [f64], cnt: &mut [u64], rows: usize, cols: usize) {
    for a in 0..rows {
        for b in 1..cols {
            sum[a * cols + b] += sum[a * cols + b - 1];
            cnt[a * cols + b] += cnt[a * cols + b - 1];
        }
        if a > 0 {
            for b in 0..cols {
                sum[a * cols + b] += sum[(a - 1) * cols + b];
                cnt[a * cols + b] += cnt[(a - 1) * cols + b];
            }
        }
    }
}

fn add_scores(scores: &mut [f64], sum: &[f64], cnt: &[u64], fallback: f64, y: f64) {
    for ((s, &t), &c) in scores.iter_mut().zip(sum).zip(cnt) {
        let pred = if c > 0 { t / c as f64 } else { fallback };
        *s += (pred - y) * (pred - y);
    }
}

fn reduce(parts: Vec<Vec<f64>>, len: usize, targets: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    let scale = if targets == 0 { 0.0 } else { 1.0 / targets as f64 };
    total.iter_mut().for_each(|t| *t *= scale);
    total
}

fn first_admitting(grid: &[f64], a: &[f64], b: &[f64]) -> usize {
    grid.partition_point(|&h| !rect_kernel_between(a, b, h))
}

/// Scores indexed `[g_eta2 * |k_grid| + g_k]` for one bandwidth.
fn ours_scores(train: &ObservedDataset, targets: &Targets, grid: &GridSpec, h: f64) -> Result<Vec<f64>> {
    let fit = fit_rows(train, h)?;
    let dists = estimate_distances(&fit, train.sigma());
    let (gk, ge) = (grid.k_grid.len(), grid.eta2_grid.len());
    let kmax = *grid.k_grid.last().expect("validated grid");
    let beta = train.beta();
    let global = train.global_mean();
    let parts: Vec<Vec<f64>> = targets
        .par_iter()
        .map(|(u, cells)| {
            let u = *u;
            let mut members = vec![(u, 0usize)];
            for (r, v) in ranked_neighbors(&dists, u).into_iter().take(kmax - 1).enumerate() {
                let rank = r + 1;
                members.push((v, grid.k_grid.partition_point(|&k| k <= rank)));
            }
            let fallback = train.row_mean(u).unwrap_or(global);
            let mut scores = vec![0.0; ge * gk];
            let mut sum = vec![0.0; gk * ge];
            let mut cnt = vec![0u64; gk * ge];
            let mut sum_t = vec![0.0; ge * gk];
            let mut cnt_t = vec![0u64; ge * gk];
            for &(i, y) in cells {
                sum.fill(0.0);
                cnt.fill(0);
                for &(v, bk) in &members {
                    let (cols, vals) = train.row(v);
                    for (&j, &x) in cols.iter().zip(vals) {
                        let d = beta.linf(i, j);
                        let be = grid.eta2_grid.partition_point(|&e| e < d);
                        if be < ge {
                            sum[bk * ge + be] += x;
                            cnt[bk * ge + be] += 1;
                        }
                    }
                }
                cumulate(&mut sum, &mut cnt, gk, ge);
                // transpose to eta2-major so grid order is (eta2, k)
                for a in 0..gk {
                    for b in 0..ge {
                        sum_t[b * gk + a] = sum[a * ge + b];
                        cnt_t[b * gk + a] = cnt[a * ge + b];
                    }
                }
                add_scores(&mut scores, &sum_t, &cnt_t, fallback, y);
            }
            scores
        })
        .collect();
    Ok(reduce(parts, ge * gk, count(targets)))
}

fn rowreg_scores(train: &ObservedDataset, targets: &Targets, grid: &GridSpec) -> Vec<f64> {
    let gh = grid.h_grid.len();
    let beta = train.beta();
    let global = train.global_mean();
    let parts: Vec<Vec<f64>> = targets
        .par_iter()
        .map(|(u, cells)| {
            let fallback = train.row_mean(*u).unwrap_or(global);
            let (cols, vals) = train.row(*u);
            let mut scores = vec![0.0; gh];
            let mut sum = vec![0.0; gh];
            let mut cnt = vec![0u64; gh];
            for &(i, y) in cells {
                sum.fill(0.0);
                cnt.fill(0);
                for (&j, &x) in cols.iter().zip(vals) {
                    let b = first_admitting(&grid.h_grid, beta.point(i), beta.point(j));
                    if b < gh {
                        sum[b] += x;
                        cnt[b] += 1;
                    }
                }
                cumulate(&mut sum, &mut cnt, 1, gh);
                add_scores(&mut scores, &sum, &cnt, fallback, y);
            }
            scores
        })
        .collect();
    reduce(parts, gh, count(targets))
}

/// Scores indexed `[g_row * |h_grid| + g_col]`.
fn oracle_scores(train: &ObservedDataset, truth: &GroundTruthInstance, targets: &Targets, grid: &GridSpec) -> Vec<f64> {
    let gh = grid.h_grid.len();
    let (alpha, beta) = (&truth.row_covariates, train.beta());
    let global = train.global_mean();
    let parts: Vec<Vec<f64>> = targets
        .par_iter()
        .map(|(u, cells)| {
            let u = *u;
            let rows: Vec<(usize, usize)> = (0..train.n())
                .map(|v| (v, first_admitting(&grid.h_grid, alpha.point(u), alpha.point(v))))
                .filter(|&(_, b)| b < gh)
                .collect();
            let fallback = train.row_mean(u).unwrap_or(global);
            let mut scores = vec![0.0; gh * gh];
            let mut sum = vec![0.0; gh * gh];
            let mut cnt = vec![0u64; gh * gh];
            for &(i, y) in cells {
                sum.fill(0.0);
                cnt.fill(0);
                for &(v, ba) in &rows {
                    let (cols, vals) = train.row(v);
                    for (&j, &x) in cols.iter().zip(vals) {
                        let bb = first_admitting(&grid.h_grid, beta.point(i), beta.point(j));
                        if bb < gh {
                            sum[ba * gh + bb] += x;
                            cnt[ba * gh + bb] += 1;
                        }
                    }
                }
                cumulate(&mut sum, &mut cnt, gh, gh);
                add_scores(&mut scores, &sum, &cnt, fallback, y);
            }
            scores
        })
        .collect();
    reduce(parts, gh * gh, count(targets))
}

fn count(targets: &Targets) -> usize {
    targets.iter().map(|(_, c)| c.len()).sum()
}

fn dense_score(values: &ndarray::Array2<f64>, targets: &Targets) -> f64 {
    let total: f64 = targets
        .iter()
        .flat_map(|(u, cells)| cells.iter().map(move |&(i, y)| (values[[*u, i]] - y).powi(2)))
        .sum();
    match count(targets) {
        0 => 0.0,
        c => total / c as f64,
    }
}

/// Index of the smallest score; ties go to the earliest.
fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = k;
        }
    }
    best
}

fn require_truth<'a>(truth: Option<&'a GroundTruthInstance>, what: &str) -> Result<&'a GroundTruthInstance> {
    truth.ok_or_else(|| Error::config(format!("{what} needs the ground truth (alpha.csv and truth.csv)")))
}

/// Picks hyperparameters for `method` by grid search.
pub fn tune(
    ds: &ObservedDataset,
    truth: Option<&GroundTruthInstance>,
    method: Method,
    grid: &GridSpec,
    seed: SeedSpec,
) -> Result<ChosenParams> {
    grid.validate()?;
    if let Some(t) = truth {
        if t.truth.dim() != (ds.n(), ds.m()) {
            return Err(Error::Shape {
                expected: (ds.n(), ds.m()),
                actual: t.truth.dim(),
            });
        }
    }
    let (train, targets) = match grid.objective {
        TuneObjective::Validation => {
            let (train, held) = validation_split(ds, grid.val_fraction, seed);
            (std::borrow::Cow::Owned(train), group(held))
        }
        TuneObjective::Oracle => {
            let t = require_truth(truth, "oracle-mode tuning")?;
            let cells = t.truth.indexed_iter().map(|((u, i), &y)| (u, i, y)).collect();
            (std::borrow::Cow::Borrowed(ds), group(cells))
        }
    };
    let train = train.as_ref();
    let mut out = ChosenParams::default();
    match method {
        Method::Ours => {
            let (ge, gk) = (grid.eta2_grid.len(), grid.k_grid.len());
            let mut best: Option<(f64, usize, usize)> = None;
            for (gh, &h) in grid.h_grid.iter().enumerate() {
                let scores = ours_scores(train, &targets, grid, h)?;
                let k = argmin(&scores);
                if best.map_or(true, |(s, _, _)| scores[k] < s) {
                    best = Some((scores[k], gh, k));
                }
            }
            let (score, gh, k) = best.expect("non-empty grid");
            out.h = Some(grid.h_grid[gh]);
            out.eta2 = Some(grid.eta2_grid[k / gk]);
            out.k = Some(grid.k_grid[k % gk]);
            out.tuning_score = score;
            debug_assert!(k / gk < ge);
        }
        Method::RowRegression => {
            let scores = rowreg_scores(train, &targets, grid);
            let k = argmin(&scores);
            out.h = Some(grid.h_grid[k]);
            out.tuning_score = scores[k];
        }
        Method::Oracle => {
            let t = require_truth(truth, "oracle regression")?;
            let scores = oracle_scores(train, t, &targets, grid);
            let k = argmin(&scores);
            let gh = grid.h_grid.len();
            out.h_row = Some(grid.h_grid[k / gh]);
            out.h = Some(grid.h_grid[k % gh]);
            out.tuning_score = scores[k];
        }
        Method::Als => {
            let scores = grid
                .als_ridge_grid
                .iter()
                .map(|&ridge| {
                    let cfg = AlsConfig { ridge, seed, ..AlsConfig::default() };
                    als_fit(train, &cfg).map(|est| dense_score(&est.values, &targets))
                })
                .collect::<Result<Vec<f64>>>()?;
            let k = argmin(&scores);
            out.ridge = Some(grid.als_ridge_grid[k]);
            out.tuning_score = scores[k];
        }
        Method::SoftImpute => {
            let lambdas = default_lambda_grid(ds);
            let path = softimpute_path(train, &SoftImputeConfig::with_grid(lambdas.clone()))?;
            let scores: Vec<f64> = path.iter().map(|z| dense_score(z, &targets)).collect();
            let k = argmin(&scores);
            out.lambda = Some(lambdas[k]);
            out.tuning_score = scores[k];
        }
    }
    Ok(out)
}

fn need<T: Copy>(value: Option<T>, name: &str, method: Method) -> Result<T> {
    value.ok_or_else(|| Error::config(format!("{method} needs parameter '{name}'")))
}

/// Fits `method` on all of `ds` with fixed hyperparameters.
pub fn fit_method(
    ds: &ObservedDataset,
    truth: Option<&GroundTruthInstance>,
    method: Method,
    params: &ChosenParams,
    seed: SeedSpec,
) -> Result<DenseEstimate> {
    match method {
        Method::Ours => {
            let spec = match (params.k, params.eta1) {
                (Some(k), _) => NeighborhoodSpec::k_nearest(k, need(params.eta2, "eta2", method)?),
                (None, Some(eta1)) => NeighborhoodSpec::radius(eta1, need(params.eta2, "eta2", method)?),
                (None, None) => return Err(Error::config("ours needs parameter 'k' or 'eta1'")),
            };
            let cfg = PipelineConfig {
                h: need(params.h, "h", method)?,
                spec,
                split: false,
                seed,
            };
            full_pipeline(ds, &cfg)
        }
        Method::RowRegression => row_regression_baseline(ds, need(params.h, "h", method)?),
        Method::Oracle => {
            let t = require_truth(truth, "oracle regression")?;
            oracle_regression(
                ds,
                &t.row_covariates,
                need(params.h_row, "h_row", method)?,
                need(params.h, "h", method)?,
            )
        }
        Method::Als => {
            let cfg = AlsConfig {
                ridge: need(params.ridge, "ridge", method)?,
                seed,
                ..AlsConfig::default()
            };
            als_fit(ds, &cfg)
        }
        Method::SoftImpute => {
            let lambda = need(params.lambda, "lambda", method)?;
            let mut lambdas: Vec<f64> = default_lambda_grid(ds).into_iter().filter(|&l| l > lambda).collect();
            lambdas.push(lambda);
            crate::baselines::softimpute_fit(ds, &SoftImputeConfig::with_grid(lambdas))
        }
    }
}

/// Tunes `method` and refits it on the full dataset.
pub fn evaluate(
    ds: &ObservedDataset,
    truth: Option<&GroundTruthInstance>,
    method: Method,
    grid: &GridSpec,
    seed: SeedSpec,
) -> Result<(DenseEstimate, ChosenParams)> {
    let params = tune(ds, truth, method, grid, seed)?;
    let est = fit_method(ds, truth, method, &params, seed)?;
    Ok((est, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::mse_arrays;
    use crate::nn::nn_predict;
    use crate::synthgen::{generate, LatentFunction, SynthConfig};

    fn instance(seed: u64) -> (GroundTruthInstance, ObservedDataset) {
        generate(&SynthConfig::new(LatentFunction::F3, 30, 60, 0.2, 0.2, SeedSpec::new(seed))).unwrap()
    }

    fn small_grid() -> GridSpec {
        GridSpec {
            h_grid: vec![0.05, 0.1, 0.2],
            eta2_grid: vec![0.0, 0.02, 0.05, 0.1],
            k_grid: vec![1, 3, 8, 20],
            als_ridge_grid: vec![1e-3, 1e-1],
            ..GridSpec::default()
        }
    }

    fn all_cells(t: &GroundTruthInstance) -> Targets {
        group(t.truth.indexed_iter().map(|((u, i), &y)| (u, i, y)).collect())
    }

    #[test]
    fn split_partitions_entries() {
        let (_, ds) = instance(1);
        let (train, held) = validation_split(&ds, 0.2, SeedSpec::new(5));
        assert_eq!(held.len(), (0.2 * ds.num_observed() as f64).round() as usize);
        assert_eq!(train.num_observed() + held.len(), ds.num_observed());
        for &(u, i, x) in &held {
            assert_eq!(ds.value(u, i), Some(x));
            assert_eq!(train.value(u, i), None);
        }
        let (train2, held2) = validation_split(&ds, 0.2, SeedSpec::new(5));
        assert_eq!((train2, held2), (train, held));
    }

    #[test]
    fn ours_fast_scores_match_direct_predictions() {
        let (truth, ds) = instance(2);
        let grid = small_grid();
        let targets = all_cells(&truth);
        let (ge, gk) = (grid.eta2_grid.len(), grid.k_grid.len());
        for &h in &grid.h_grid {
            let fast = ours_scores(&ds, &targets, &grid, h).unwrap();
            let dists = estimate_distances(&fit_rows(&ds, h).unwrap(), ds.sigma());
            for (a, &eta2) in grid.eta2_grid.iter().enumerate() {
                for (b, &k) in grid.k_grid.iter().enumerate() {
                    let est = nn_predict(&ds, &dists, &NeighborhoodSpec::k_nearest(k, eta2)).unwrap();
                    let direct = mse_arrays(&est.values, &truth.truth).unwrap();
                    assert!((fast[a * gk + b] - direct).abs() < 1e-12, "h={h} eta2={eta2} k={k}");
                }
            }
            assert_eq!(fast.len(), ge * gk);
        }
    }

    #[test]
    fn rowreg_fast_scores_match_direct_predictions() {
        let (truth, ds) = instance(3);
        let grid = small_grid();
        let fast = rowreg_scores(&ds, &all_cells(&truth), &grid);
        for (g, &h) in grid.h_grid.iter().enumerate() {
            let est = row_regression_baseline(&ds, h).unwrap();
            assert!((fast[g] - mse_arrays(&est.values, &truth.truth).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_fast_scores_match_direct_predictions() {
        let (truth, ds) = instance(4);
        let grid = small_grid();
        let gh = grid.h_grid.len();
        let fast = oracle_scores(&ds, &truth, &all_cells(&truth), &grid);
        for (a, &h1) in grid.h_grid.iter().enumerate() {
            for (b, &h2) in grid.h_grid.iter().enumerate() {
                let est = oracle_regression(&ds, &truth.row_covariates, h1, h2).unwrap();
                let direct = mse_arrays(&est.values, &truth.truth).unwrap();
                assert!((fast[a * gh + b] - direct).abs() < 1e-12, "h1={h1} h2={h2}");
            }
        }
    }

    #[test]
    fn oracle_objective_picks_the_argmin() {
        let (truth, ds) = instance(5);
        let grid = GridSpec {
            objective: TuneObjective::Oracle,
            ..small_grid()
        };
        let chosen = tune(&ds, Some(&truth), Method::RowRegression, &grid, SeedSpec::new(0)).unwrap();
        let direct: Vec<f64> = grid
            .h_grid
            .iter()
            .map(|&h| mse_arrays(&row_regression_baseline(&ds, h).unwrap().values, &truth.truth).unwrap())
            .collect();
        let best = direct.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(chosen.h, Some(grid.h_grid[direct.iter().position(|&d| d == best).unwrap()]));
        let (est, params) = evaluate(&ds, Some(&truth), Method::Ours, &grid, SeedSpec::new(0)).unwrap();
        assert!((mse_arrays(&est.values, &truth.truth).unwrap() - params.tuning_score).abs() < 1e-12);
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let (truth, ds) = instance(6);
        let grid = GridSpec::single(0.07, 0.03, 4);
        let p = tune(&ds, Some(&truth), Method::Ours, &grid, SeedSpec::new(1)).unwrap();
        assert_eq!((p.h, p.eta2, p.k), (Some(0.07), Some(0.03), Some(4)));
        let p = tune(&ds, Some(&truth), Method::Oracle, &grid, SeedSpec::new(1)).unwrap();
        assert_eq!((p.h_row, p.h), (Some(0.07), Some(0.07)));
    }

    #[test]
    fn ties_go_to_the_first_grid_point() {
        assert_eq!(argmin(&[2.0, 1.0, 1.0, 3.0]), 1);
        // constant data: every grid point predicts exactly
        let beta = crate::data::CovariateSet::from_scalars((0..20).map(|i| i as f64 / 20.0).collect()).unwrap();
        let trips: Vec<_> = (0..10).flat_map(|u| (0..20).filter(move |i| (u + i) % 3 == 0).map(move |i| (u, i, 0.5))).collect();
        let ds = ObservedDataset::from_triplets(10, 20, &trips, beta, 0.1).unwrap();
        let p = tune(&ds, None, Method::Ours, &small_grid(), SeedSpec::new(2)).unwrap();
        assert_eq!((p.h, p.eta2, p.k), (Some(0.05), Some(0.0), Some(1)));
        assert_eq!(p.tuning_score, 0.0);
    }

    #[test]
    fn validation_tuning_is_deterministic() {
        let (truth, ds) = instance(7);
        let grid = small_grid();
        for method in Method::ALL {
            let a = evaluate(&ds, Some(&truth), method, &grid, SeedSpec::new(3)).unwrap();
            let b = evaluate(&ds, Some(&truth), method, &grid, SeedSpec::new(3)).unwrap();
            assert_eq!(a, b, "{method}");
        }
    }

    #[test]
    fn baseline_tuning_uses_their_grids() {
        let (truth, ds) = instance(8);
        let grid = small_grid();
        let als = tune(&ds, Some(&truth), Method::Als, &grid, SeedSpec::new(4)).unwrap();
        assert!(grid.als_ridge_grid.contains(&als.ridge.unwrap()));
        let si = tune(&ds, Some(&truth), Method::SoftImpute, &grid, SeedSpec::new(4)).unwrap();
        assert!(default_lambda_grid(&ds).contains(&si.lambda.unwrap()));
        let refit = fit_method(&ds, None, Method::SoftImpute, &si, SeedSpec::new(4)).unwrap();
        assert_eq!(refit.method, Method::SoftImpute);
    }

    #[test]
    fn missing_truth_is_a_config_error() {
        let (_, ds) = instance(9);
        let grid = small_grid();
        let err = tune(&ds, None, Method::Oracle, &grid, SeedSpec::new(0)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let oracle_mode = GridSpec { objective: TuneObjective::Oracle, ..small_grid() };
        assert!(tune(&ds, None, Method::RowRegression, &oracle_mode, SeedSpec::new(0)).is_err());
        assert!(fit_method(&ds, None, Method::Ours, &ChosenParams::default(), SeedSpec::new(0)).is_err());
    }
}
