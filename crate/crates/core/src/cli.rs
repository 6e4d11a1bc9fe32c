//! The `onesided-mc` command line.
//!
//! Settings come from an optional JSON file (`--config`), then `--set
//! key=value` overrides (dotted keys reach into `grid` and `params`), then
//! the dedicated flags. Unknown keys are rejected by name.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::Method;
use crate::distance::estimate_distances;
use crate::error::{Error, Result};
use crate::harness::{
    evaluate, fit_method, mse, summarize, sweep_n, sweep_p, tune, write_metadata, write_results_csv,
    write_summary_csv, Axis, ChosenParams, GridSpec, Scale, TuneObjective,
};
use crate::io::{read_dataset, write_dataset, write_matrix_csv, DatasetHeader};
use crate::kernel::fit_rows;
use crate::rng::SeedSpec;
use crate::synthgen::{generate, FunctionId, LatentFunction, SynthConfig};
use crate::theory::{theory_params, TheoryInputs};

pub const JOBS_ENV: &str = "ONESIDED_MC_JOBS";

#[derive(Parser, Debug)]
#[command(name = "onesided-mc", version, about = "Matrix estimation with column covariates only")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON settings file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, env = JOBS_ENV)]
    jobs: Option<usize>,
    /// Override one setting, e.g. `--set n=200` or `--set grid.k_grid=[5,10]`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Tuning objective: oracle or validation
    #[arg(long)]
    objective: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset and write it as a dataset directory
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit one method and write `estimate.csv`
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: String,
        /// Also write the row distances used by `ours`
        #[arg(long)]
        dump_distances: bool,
    },
    /// Grid-search one method and write `params.json`
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: String,
    },
    /// Replicated experiment over n or p
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        /// Restrict to these methods (repeatable)
        #[arg(long)]
        method: Vec<String>,
        /// Use the full sweep sizes (m = 500, ten trials)
        #[arg(long)]
        full_scale: bool,
    },
    /// Write the estimated squared row distances
    Distances {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

/// Fixed hyperparameters. When any is set, `estimate` skips tuning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedParams {
    pub h: Option<f64>,
    pub eta2: Option<f64>,
    pub k: Option<usize>,
    pub eta1: Option<f64>,
    pub h_row: Option<f64>,
    pub ridge: Option<f64>,
    pub lambda: Option<f64>,
}

impl FixedParams {
    fn is_empty(&self) -> bool {
        *self == FixedParams::default()
    }

    fn chosen(&self) -> ChosenParams {
        ChosenParams {
            h: self.h,
            eta2: self.eta2,
            k: self.k,
            eta1: self.eta1,
            h_row: self.h_row,
            ridge: self.ridge,
            lambda: self.lambda,
            tuning_score: f64::NAN,
        }
    }
}

/// Everything a run can be configured with. Field names follow
/// [`SynthConfig`] and [`GridSpec`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub function: Option<FunctionId>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub p: Option<f64>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    /// Sweep axis values (row counts or sampling rates).
    pub values: Option<Vec<f64>>,
    pub methods: Option<Vec<Method>>,
    pub grid: GridSpec,
    pub params: FixedParams,
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::config(format!("malformed key '{key}'")));
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("'{key}' does not name a setting")))?;
        if k + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Builds the run configuration from an optional file plus overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::parse(p, e))?
        }
        None => Value::Object(Default::default()),
    };
    if !root.is_object() {
        return Err(Error::config("config file must hold a JSON object"));
    }
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override '{item}' is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut root, key.trim(), value)?;
    }
    serde_json::from_value(root).map_err(|e| Error::config(e.to_string()))
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    seed: SeedSpec,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = load_config(common.config.as_deref(), &common.overrides)?;
        if let Some(s) = common.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &common.objective {
            cfg.grid.objective = o.parse::<TuneObjective>()?;
        }
        cfg.grid.validate()?;
        let seed = SeedSpec::new(cfg.seed.unwrap_or(0));
        std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        Ok(Context {
            cfg,
            out: common.out.clone(),
            seed,
        })
    }

    fn synth(&self, n: usize, m: usize) -> Result<SynthConfig> {
        let id = self.cfg.function.clone().unwrap_or(FunctionId::F3);
        Ok(SynthConfig::new(
            LatentFunction::from_id(&id)?,
            self.cfg.n.unwrap_or(n),
            self.cfg.m.unwrap_or(m),
            self.cfg.p.unwrap_or(0.05),
            self.cfg.sigma.unwrap_or(0.2),
            self.seed,
        ))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn log(msg: impl AsRef<str>) {
    eprintln!("onesided-mc: {}", msg.as_ref());
}

fn cmd_generate(common: &Common) -> Result<()> {
    let ctx = Context::new(common)?;
    let cfg = ctx.synth(150, 300)?;
    let (truth, ds) = generate(&cfg)?;
    write_dataset(&ctx.out, &DatasetHeader::from_config(&cfg), &ds, Some(&truth))?;
    log(format!(
        "wrote {}x{} dataset with {} observations to {}",
        cfg.n,
        cfg.m,
        ds.num_observed(),
        ctx.out.display()
    ));
    Ok(())
}

fn cmd_estimate(common: &Common, data: &Path, method: &str, dump: bool) -> Result<()> {
    let method: Method = method.parse()?;
    let ctx = Context::new(common)?;
    let bundle = read_dataset(data)?;
    let truth = bundle.truth.as_ref();
    let (est, params) = if ctx.cfg.params.is_empty() {
        evaluate(&bundle.data, truth, method, &ctx.cfg.grid, ctx.seed)?
    } else {
        let params = ctx.cfg.params.chosen();
        (fit_method(&bundle.data, truth, method, &params, ctx.seed)?, params)
    };
    write_matrix_csv(&ctx.out.join("estimate.csv"), &est.values)?;
    write_json(&ctx.out.join("params.json"), &params)?;
    if dump {
        if method != Method::Ours {
            return Err(Error::config("--dump-distances applies to method 'ours' only"));
        }
        let h = params.h.expect("ours always has a bandwidth");
        let dists = estimate_distances(&fit_rows(&bundle.data, h)?, bundle.data.sigma());
        dists.write_csv(&ctx.out.join("distances.csv"))?;
    }
    if let Some(t) = truth {
        println!("mse={}", mse(&est, t)?);
    }
    Ok(())
}

fn cmd_tune(common: &Common, data: &Path, method: &str) -> Result<()> {
    let method: Method = method.parse()?;
    let ctx = Context::new(common)?;
    let bundle = read_dataset(data)?;
    let params = tune(&bundle.data, bundle.truth.as_ref(), method, &ctx.cfg.grid, ctx.seed)?;
    let path = ctx.out.join("params.json");
    write_json(&path, &params)?;
    log(format!("wrote {}", path.display()));
    Ok(())
}

fn cmd_sweep(common: &Common, axis: &str, methods: &[String], full: bool) -> Result<()> {
    let axis: Axis = axis.parse()?;
    let ctx = Context::new(common)?;
    let scale = if full { Scale::Full } else { Scale::Desk };
    let methods: Vec<Method> = if !methods.is_empty() {
        methods.iter().map(|m| m.parse()).collect::<Result<_>>()?
    } else {
        ctx.cfg.methods.clone().unwrap_or_else(|| Method::ALL.to_vec())
    };
    let trials = if full { scale.trials() } else { ctx.cfg.trials.unwrap_or(scale.trials()) };
    let m = if full { scale.m() } else { ctx.cfg.m.unwrap_or(scale.m()) };
    let grid = &ctx.cfg.grid;
    let result = match axis {
        Axis::N => {
            let base = SynthConfig { m, ..ctx.synth(scale.p_axis_n(), m)? };
            let n_list: Vec<usize> = match &ctx.cfg.values {
                Some(v) => v
                    .iter()
                    .map(|&x| {
                        if x >= 1.0 && x.fract() == 0.0 {
                            Ok(x as usize)
                        } else {
                            Err(Error::config(format!("row count {x} is not a positive integer")))
                        }
                    })
                    .collect::<Result<_>>()?,
                None => scale.n_list(),
            };
            sweep_n(&base, &n_list, &methods, grid, trials)?
        }
        Axis::P => {
            let n = if full { scale.p_axis_n() } else { ctx.cfg.n.unwrap_or(scale.p_axis_n()) };
            let base = SynthConfig { n, m, ..ctx.synth(n, m)? };
            let p_list = ctx.cfg.values.clone().unwrap_or_else(|| scale.p_list());
            sweep_p(&base, &p_list, &methods, grid, trials)?
        }
    };
    write_results_csv(&ctx.out.join("results.csv"), &result)?;
    write_summary_csv(&ctx.out.join("summary.csv"), &summarize(&result.records))?;
    write_metadata(&ctx.out.join("metadata.json"), &result)?;
    log(format!("wrote {} records to {}", result.records.len(), ctx.out.display()));
    Ok(())
}

fn cmd_distances(common: &Common, data: &Path) -> Result<()> {
    let ctx = Context::new(common)?;
    let bundle = read_dataset(data)?;
    let ds = &bundle.data;
    let h = match ctx.cfg.params.h {
        Some(h) => h,
        None => {
            let header = &bundle.header;
            let smooth = header.smoothness;
            theory_params(&TheoryInputs {
                n: ds.n(),
                m: ds.m(),
                p: header.p,
                lambda: smooth.map_or(1.0, |s| s.lambda),
                lipschitz: smooth.map_or(1.0, |s| s.lipschitz),
                d1: header.d1.max(1),
                d2: header.d2,
                sigma: ds.sigma(),
            })?
            .h
        }
    };
    let dists = estimate_distances(&fit_rows(ds, h)?, ds.sigma());
    let path = ctx.out.join("distances.csv");
    dists.write_csv(&path)?;
    log(format!("wrote {} (h={h})", path.display()));
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate { common } => cmd_generate(common),
        Command::Estimate {
            common,
            data,
            method,
            dump_distances,
        } => cmd_estimate(common, data, method, *dump_distances),
        Command::Tune { common, data, method } => cmd_tune(common, data, method),
        Command::Sweep {
            common,
            axis,
            method,
            full_scale,
        } => cmd_sweep(common, axis, method, *full_scale),
        Command::Distances { common, data } => cmd_distances(common, data),
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Generate { common }
        | Command::Estimate { common, .. }
        | Command::Tune { common, .. }
        | Command::Sweep { common, .. }
        | Command::Distances { common, .. } => common,
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code: 0 on success, 2 for configuration
/// errors, 1 for I/O and malformed input.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return 2;
        }
    };
    let outcome = match common(&cli.command).jobs {
        Some(0) => Err(Error::config("--jobs must be at least 1")),
        Some(jobs) => match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(Error::config(format!("cannot start {jobs} workers: {e}"))),
        },
        None => dispatch(&cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = load_config(
            None,
            &[
                "n=40".into(),
                "function=f1".into(),
                "grid.k_grid=[2,4]".into(),
                "params.h=0.1".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.n, Some(40));
        assert_eq!(cfg.function, Some(FunctionId::F1));
        assert_eq!(cfg.grid.k_grid, vec![2, 4]);
        assert_eq!(cfg.params.h, Some(0.1));
        assert_eq!(cfg.grid.h_grid, GridSpec::default().h_grid);
    }

    #[test]
    fn unknown_keys_are_named() {
        for bad in ["bogus=1", "grid.bogus=1", "params.bogus=1"] {
            let err = load_config(None, &[bad.into()]).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains("bogus"), "{err}");
        }
        assert!(load_config(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 10, "m": 20, "grid": {"objective": "oracle"}}"#).unwrap();
        let cfg = load_config(Some(&path), &["m=30".into()]).unwrap();
        assert_eq!((cfg.n, cfg.m), (Some(10), Some(30)));
        assert_eq!(cfg.grid.objective, TuneObjective::Oracle);
        std::fs::write(&path, "[1, 2]").unwrap();
        assert!(load_config(Some(&path), &[]).is_err());
        let missing = load_config(Some(&dir.path().join("none.json")), &[]).unwrap_err();
        assert_eq!(missing.exit_code(), 1);
    }
}
