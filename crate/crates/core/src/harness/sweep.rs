//! Replicated experiments over the number of rows or the sampling rate.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, mse, ChosenParams, GridSpec, TuneObjective};
use crate::baselines::AlsConfig;
use crate::data::Method;
use crate::error::{Error, Result};
use crate::synthgen::{generate, FunctionId, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    N,
    P,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Axis::N),
            "p" => Ok(Axis::P),
            _ => Err(Error::config(format!("unknown axis '{s}' (expected n or p)"))),
        }
    }
}

/// Sweep sizes. `Desk` runs in minutes on a laptop; `Full` uses m = 500,
/// ten trials and row counts up to 500.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn m(self) -> usize {
        match self {
            Scale::Desk => 300,
            Scale::Full => 500,
        }
    }

    pub fn trials(self) -> usize {
        match self {
            Scale::Desk => 5,
            Scale::Full => 10,
        }
    }

    /// Row counts swept at `p = 0.05`.
    pub fn n_list(self) -> Vec<usize> {
        match self {
            Scale::Desk => vec![25, 50, 100, 150, 200],
            Scale::Full => vec![25, 50, 100, 200, 300, 400, 500],
        }
    }

    pub fn p_list(self) -> Vec<f64> {
        vec![0.02, 0.03, 0.05, 0.08, 0.12]
    }

    /// Row count used by the sampling-rate sweep.
    pub fn p_axis_n(self) -> usize {
        match self {
            Scale::Desk => 150,
            Scale::Full => 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub trial: usize,
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub sigma: f64,
    pub function: FunctionId,
    pub params: ChosenParams,
    pub mse: f64,
    /// Tuning plus the final fit, excluding data generation.
    pub seconds: f64,
    pub dataset_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<ExperimentRecord>,
    pub axis: Axis,
    pub objective: TuneObjective,
    pub grid: GridSpec,
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub sigma: f64,
    pub function: FunctionId,
    pub mse_mean: f64,
    /// Sample standard deviation; zero for a single trial.
    pub mse_std: f64,
    pub trials: usize,
}

/// One instance per `(n, trial)`; every method is evaluated on it.
pub fn sweep_n(
    base: &SynthConfig,
    n_list: &[usize],
    methods: &[Method],
    grid: &GridSpec,
    trials: usize,
) -> Result<ExperimentResult> {
    let cells = n_list
        .iter()
        .map(|&n| ("n", n as u64, SynthConfig { n, ..base.clone() }))
        .collect();
    run_sweep(base, Axis::N, cells, methods, grid, trials)
}

/// One instance per `(p, trial)`; every method is evaluated on it.
pub fn sweep_p(
    base: &SynthConfig,
    p_list: &[f64],
    methods: &[Method],
    grid: &GridSpec,
    trials: usize,
) -> Result<ExperimentResult> {
    let cells = p_list
        .iter()
        .map(|&p| ("p", p.to_bits(), SynthConfig { p, ..base.clone() }))
        .collect();
    run_sweep(base, Axis::P, cells, methods, grid, trials)
}

/// Runs every `(cell, trial)` in parallel. Records come back ordered by
/// cell, then trial, then the order of `methods`.
pub fn run_sweep(
    base: &SynthConfig,
    axis: Axis,
    cells: Vec<(&str, u64, SynthConfig)>,
    methods: &[Method],
    grid: &GridSpec,
    trials: usize,
) -> Result<ExperimentResult> {
    if trials == 0 {
        return Err(Error::config("trials must be at least 1"));
    }
    if methods.is_empty() {
        return Err(Error::config("no methods selected"));
    }
    grid.validate()?;
    for (_, _, cfg) in &cells {
        cfg.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let per_job: Vec<Vec<ExperimentRecord>> = jobs
        .par_iter()
        .map(|&(c, trial)| {
            let (label, bits, cfg) = &cells[c];
            let seed = cfg.seed.for_cell(label, *bits).with_trial(trial as u64);
            let cfg = SynthConfig { seed, ..cfg.clone() };
            let (truth, ds) = generate(&cfg)?;
            let hash = ds.content_hash();
            methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let (est, params) = evaluate(&ds, Some(&truth), method, grid, seed)?;
                    let seconds = start.elapsed().as_secs_f64();
                    Ok(ExperimentRecord {
                        trial,
                        method,
                        n: cfg.n,
                        m: cfg.m,
                        p: cfg.p,
                        sigma: cfg.sigma,
                        function: cfg.function.id(),
                        params,
                        mse: mse(&est, &truth)?,
                        seconds,
                        dataset_hash: hash.clone(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        records: per_job.into_iter().flatten().collect(),
        axis,
        objective: grid.objective,
        grid: grid.clone(),
        trials,
        master_seed: base.seed.master,
    })
}

/// Mean and sample standard deviation of the MSE per `(method, cell)`,
/// ordered by cell and then by method in first-seen order.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut rows: Vec<(SummaryRow, Vec<f64>)> = Vec::new();
    for r in records {
        let same = |s: &SummaryRow| {
            s.method == r.method
                && s.n == r.n
                && s.m == r.m
                && s.p.to_bits() == r.p.to_bits()
                && s.sigma.to_bits() == r.sigma.to_bits()
                && s.function == r.function
        };
        match rows.iter_mut().find(|(s, _)| same(s)) {
            Some((_, v)) => v.push(r.mse),
            None => rows.push((
                SummaryRow {
                    method: r.method,
                    n: r.n,
                    m: r.m,
                    p: r.p,
                    sigma: r.sigma,
                    function: r.function.clone(),
                    mse_mean: 0.0,
                    mse_std: 0.0,
                    trials: 0,
                },
                vec![r.mse],
            )),
        }
    }
    rows.into_iter()
        .map(|(mut s, v)| {
            let k = v.len() as f64;
            let mean = v.iter().sum::<f64>() / k;
            s.mse_mean = mean;
            s.mse_std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            s.trials = v.len();
            s
        })
        .collect()
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

/// Writes one line per record. The oracle's row bandwidth goes in the
/// `eta1` column and its column bandwidth in `h`.
pub fn write_results_csv(path: &Path, result: &ExperimentResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = ["trial", "method", "n", "m", "p", "sigma", "function", "h", "eta2", "k", "eta1", "mse", "seconds"];
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in &result.records {
        let eta1 = if r.method == Method::Oracle { r.params.h_row } else { r.params.eta1 };
        w.write_record([
            r.trial.to_string(),
            r.method.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.p.to_string(),
            r.sigma.to_string(),
            r.function.to_string(),
            opt(r.params.h),
            opt(r.params.eta2),
            opt(r.params.k),
            opt(eta1),
            r.mse.to_string(),
            format!("{:.6}", r.seconds),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = ["method", "n", "m", "p", "sigma", "function", "mse_mean", "mse_std", "trials"];
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for s in rows {
        w.write_record([
            s.method.to_string(),
            s.n.to_string(),
            s.m.to_string(),
            s.p.to_string(),
            s.sigma.to_string(),
            s.function.to_string(),
            s.mse_mean.to_string(),
            s.mse_std.to_string(),
            s.trials.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Metadata<'a> {
    axis: Axis,
    objective: TuneObjective,
    objective_note: &'static str,
    trials: usize,
    master_seed: u64,
    grid: &'a GridSpec,
    als_defaults: AlsConfig,
    baseline_note: &'static str,
    records: usize,
}

/// Sidecar JSON naming the tuning objective and baseline settings.
pub fn write_metadata(path: &Path, result: &ExperimentResult) -> Result<()> {
    let meta = Metadata {
        axis: result.axis,
        objective: result.objective,
        objective_note: match result.objective {
            TuneObjective::Oracle => "hyperparameters minimise MSE against the ground truth",
            TuneObjective::Validation => "hyperparameters minimise squared error on held-out observed entries",
        },
        trials: result.trials,
        master_seed: result.master_seed,
        grid: &result.grid,
        als_defaults: AlsConfig::default(),
        baseline_note: "ALS and SoftImpute settings are package defaults; ridge and lambda are picked by the same objective",
        records: result.records.len(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSpec;
    use crate::synthgen::LatentFunction;

    fn base() -> SynthConfig {
        SynthConfig::new(LatentFunction::F3, 20, 40, 0.2, 0.2, SeedSpec::new(11))
    }

    fn grid() -> GridSpec {
        GridSpec {
            h_grid: vec![0.05, 0.1],
            eta2_grid: vec![0.02, 0.05],
            k_grid: vec![2, 5],
            ..GridSpec::default()
        }
    }

    #[test]
    fn record_counts() {
        let r = sweep_n(&base(), &[10], &[Method::RowRegression], &grid(), 2).unwrap();
        assert_eq!(r.records.len(), 2);
        let r = sweep_p(&base(), &[0.1, 0.3], &[Method::RowRegression, Method::Ours], &grid(), 3).unwrap();
        assert_eq!(r.records.len(), 2 * 3 * 2);
        assert!(r.records.iter().all(|x| x.mse >= 0.0));
    }

    #[test]
    fn methods_share_the_instance() {
        let r = sweep_n(&base(), &[15, 25], &Method::ALL, &grid(), 2).unwrap();
        for chunk in r.records.chunks(Method::ALL.len()) {
            assert!(chunk.iter().all(|x| x.dataset_hash == chunk[0].dataset_hash && x.trial == chunk[0].trial));
            assert_eq!(chunk.iter().map(|x| x.method).collect::<Vec<_>>(), Method::ALL.to_vec());
        }
        let hashes: std::collections::HashSet<_> = r.records.iter().map(|x| &x.dataset_hash).collect();
        assert_eq!(hashes.len(), 4);
    }

    #[test]
    fn noiseless_full_oracle_is_nearly_exact() {
        let cfg = SynthConfig::new(LatentFunction::F3, 40, 60, 1.0, 0.0, SeedSpec::new(1));
        let g = GridSpec {
            h_grid: vec![0.005, 0.01],
            objective: TuneObjective::Oracle,
            ..grid()
        };
        let r = sweep_p(&cfg, &[1.0], &[Method::Oracle], &g, 1).unwrap();
        assert!(r.records[0].mse < 1e-3, "{}", r.records[0].mse);
    }

    #[test]
    fn summary_recomputes_from_records() {
        let r = sweep_n(&base(), &[12, 18], &[Method::RowRegression, Method::Als], &grid(), 3).unwrap();
        let s = summarize(&r.records);
        assert_eq!(s.len(), 4);
        for row in &s {
            let v: Vec<f64> = r
                .records
                .iter()
                .filter(|x| x.method == row.method && x.n == row.n)
                .map(|x| x.mse)
                .collect();
            let mean = v.iter().sum::<f64>() / 3.0;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0;
            assert_eq!(row.trials, 3);
            assert_eq!(row.mse_mean, mean);
            assert_eq!(row.mse_std, var.sqrt());
        }
    }

    #[test]
    fn csv_columns() {
        let r = sweep_n(&base(), &[10], &[Method::Ours, Method::Oracle], &grid(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (res, sum, meta) = (dir.path().join("r.csv"), dir.path().join("s.csv"), dir.path().join("m.json"));
        write_results_csv(&res, &r).unwrap();
        write_summary_csv(&sum, &summarize(&r.records)).unwrap();
        write_metadata(&meta, &r).unwrap();
        let text = std::fs::read_to_string(&res).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "trial,method,n,m,p,sigma,function,h,eta2,k,eta1,mse,seconds");
        let ours: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(ours[1], "ours");
        assert!(ours[10].is_empty() && !ours[9].is_empty());
        let oracle: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert!(oracle[8].is_empty() && oracle[9].is_empty() && !oracle[10].is_empty());
        let text = std::fs::read_to_string(&sum).unwrap();
        assert_eq!(text.lines().next().unwrap(), "method,n,m,p,sigma,function,mse_mean,mse_std,trials");
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&meta).unwrap()).unwrap();
        assert_eq!(meta["objective"], "validation");
    }

    #[test]
    fn invalid_sweeps() {
        assert!(sweep_n(&base(), &[10], &[Method::Ours], &grid(), 0).is_err());
        assert!(sweep_n(&base(), &[10], &[], &grid(), 1).is_err());
        assert!(sweep_p(&base(), &[1.5], &[Method::Ours], &grid(), 1).is_err());
    }
}
