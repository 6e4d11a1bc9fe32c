//! On-disk dataset directories.
//!
//! A dataset directory holds `header.json`, `beta.csv` (one row per column
//! covariate, no header line), `obs.csv` (`row,col,value`) and, when the
//! generator's truth is kept, `alpha.csv` and `truth.csv`. Floats are written
//! with 17 significant digits so a read-back is bit-exact.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSet, GroundTruthInstance, ObservedDataset, Smoothness};
use crate::error::{Error, Result};
use crate::rng::SeedSpec;
use crate::synthgen::{FunctionId, LatentFunction, SynthConfig};

pub const HEADER_FILE: &str = "header.json";
pub const BETA_FILE: &str = "beta.csv";
pub const OBS_FILE: &str = "obs.csv";
pub const ALPHA_FILE: &str = "alpha.csv";
pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub n: usize,
    pub m: usize,
    pub d1: usize,
    pub d2: usize,
    pub p: f64,
    pub sigma: f64,
    #[serde(default)]
    pub function: Option<FunctionId>,
    #[serde(default)]
    pub seed: Option<SeedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<Smoothness>,
}

impl DatasetHeader {
    pub fn from_config(cfg: &SynthConfig) -> Self {
        DatasetHeader {
            n: cfg.n,
            m: cfg.m,
            d1: cfg.d1,
            d2: cfg.d2,
            p: cfg.p,
            sigma: cfg.sigma,
            function: Some(cfg.function.id()),
            seed: Some(cfg.seed),
            smoothness: Some(cfg.function.smoothness()),
        }
    }

    /// Header for data that did not come from the generator: `p` is the
    /// observed fraction and row covariates are unknown.
    pub fn for_observed(ds: &ObservedDataset) -> Self {
        DatasetHeader {
            n: ds.n(),
            m: ds.m(),
            d1: 0,
            d2: ds.beta().dim(),
            p: ds.num_observed() as f64 / (ds.n() * ds.m()) as f64,
            sigma: ds.sigma(),
            function: None,
            seed: None,
            smoothness: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub header: DatasetHeader,
    pub data: ObservedDataset,
    pub truth: Option<GroundTruthInstance>,
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_rows<'a>(path: &Path, header: Option<&str>, rows: impl Iterator<Item = Vec<String>> + 'a) -> Result<()> {
    let mut w = create(path)?;
    let io_err = |e| Error::io(path, e);
    if let Some(h) = header {
        writeln!(w, "{h}").map_err(io_err)?;
    }
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes a dense matrix as headerless CSV, one matrix row per line.
pub fn write_matrix_csv(path: &Path, a: &Array2<f64>) -> Result<()> {
    write_rows(path, None, a.rows().into_iter().map(|r| r.iter().map(|&x| fmt_f64(x)).collect()))
}

fn write_points(path: &Path, cov: &CovariateSet) -> Result<()> {
    write_rows(path, None, (0..cov.len()).map(|i| cov.point(i).iter().map(|&x| fmt_f64(x)).collect()))
}

fn reader(path: &Path, has_headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(path, format!("line {line}: '{s}' is not a number")))
}

/// Reads a headerless numeric CSV with a fixed column count.
fn read_table(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (k, rec) in reader(path, false)?.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::parse(path, format!("line {}: expected {c} fields, got {}", k + 1, rec.len())))
            }
            _ => {}
        }
        for field in rec.iter() {
            values.push(parse_f64(path, k + 1, field)?);
        }
        rows += 1;
    }
    Ok((values, rows, cols.unwrap_or(0)))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let (values, rows, cols) = read_table(path)?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::parse(path, e))
}

fn read_points(path: &Path, count: usize, dim: usize) -> Result<CovariateSet> {
    let (values, rows, cols) = read_table(path)?;
    if rows != count || cols != dim {
        return Err(Error::parse(
            path,
            format!("expected {count} rows of {dim} values, got {rows} rows of {cols}"),
        ));
    }
    CovariateSet::new(dim, values).map_err(|e| Error::parse(path, e))
}

/// Writes `data` (and optionally `truth`) into `dir`, creating it if needed.
pub fn write_dataset(
    dir: &Path,
    header: &DatasetHeader,
    data: &ObservedDataset,
    truth: Option<&GroundTruthInstance>,
) -> Result<()> {
    if header.n != data.n() || header.m != data.m() || header.d2 != data.beta().dim() {
        return Err(Error::config("dataset header does not describe the dataset"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header_path = dir.join(HEADER_FILE);
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(&header_path, json + "\n").map_err(|e| Error::io(&header_path, e))?;
    write_points(&dir.join(BETA_FILE), data.beta())?;
    write_rows(
        &dir.join(OBS_FILE),
        Some("row,col,value"),
        data.triplets().map(|(u, i, x)| vec![u.to_string(), i.to_string(), fmt_f64(x)]),
    )?;
    if let Some(t) = truth {
        if t.truth.dim() != (data.n(), data.m()) {
            return Err(Error::Shape {
                expected: (data.n(), data.m()),
                actual: t.truth.dim(),
            });
        }
        write_points(&dir.join(ALPHA_FILE), &t.row_covariates)?;
        write_matrix_csv(&dir.join(TRUTH_FILE), &t.truth)?;
    }
    Ok(())
}

/// Reads a dataset directory written by [`write_dataset`]. Truth is loaded
/// when both `alpha.csv` and `truth.csv` are present.
pub fn read_dataset(dir: &Path) -> Result<DatasetBundle> {
    let header_path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: DatasetHeader = serde_json::from_str(&text).map_err(|e| Error::parse(&header_path, e))?;
    let (n, m) = (header.n, header.m);

    let beta = read_points(&dir.join(BETA_FILE), m, header.d2)?;

    let obs_path = dir.join(OBS_FILE);
    let mut rdr = reader(&obs_path, true)?;
    let cols: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(&obs_path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if cols != ["row", "col", "value"] {
        return Err(Error::parse(&obs_path, format!("expected header row,col,value, got {}", cols.join(","))));
    }
    let mut triplets = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::parse(&obs_path, e))?;
        let index = |s: &str, bound: usize| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v < bound)
                .ok_or_else(|| Error::parse(&obs_path, format!("line {line}: index '{s}' out of range")))
        };
        triplets.push((index(&rec[0], n)?, index(&rec[1], m)?, parse_f64(&obs_path, line, &rec[2])?));
    }
    let data = ObservedDataset::from_triplets(n, m, &triplets, beta.clone(), header.sigma)
        .map_err(|e| Error::parse(&obs_path, e))?;

    let (alpha_path, truth_path) = (dir.join(ALPHA_FILE), dir.join(TRUTH_FILE));
    let truth = if alpha_path.exists() && truth_path.exists() {
        let row_covariates = read_points(&alpha_path, n, header.d1)?;
        let values = read_matrix_csv(&truth_path)?;
        if values.dim() != (n, m) {
            return Err(Error::parse(&truth_path, format!("expected {n}x{m} values, got {:?}", values.dim())));
        }
        let function = header
            .function
            .clone()
            .unwrap_or_else(|| FunctionId::Custom("unknown".into()));
        let smoothness = match header.smoothness {
            Some(s) => s,
            None => LatentFunction::from_id(&function)
                .map_err(|e| Error::parse(&header_path, e))?
                .smoothness(),
        };
        Some(GroundTruthInstance {
            function,
            row_covariates,
            col_covariates: beta,
            truth: values,
            smoothness,
        })
    } else {
        None
    };
    Ok(DatasetBundle { header, data, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate;

    fn sample() -> (SynthConfig, GroundTruthInstance, ObservedDataset) {
        let cfg = SynthConfig::new(LatentFunction::F2, 12, 20, 0.3, 0.2, SeedSpec::new(8));
        let (t, d) = generate(&cfg).unwrap();
        (cfg, t, d)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, truth, data) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &DatasetHeader::from_config(&cfg), &data, Some(&truth)).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.data, data);
        assert_eq!(back.truth.unwrap(), truth);
        assert_eq!(back.header, DatasetHeader::from_config(&cfg));
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        for x in [std::f64::consts::PI, -1e-300, 0.0, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn truth_is_optional() {
        let (_, _, data) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &DatasetHeader::for_observed(&data), &data, None).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert!(back.truth.is_none());
        assert_eq!(back.data, data);
    }

    #[test]
    fn malformed_inputs_are_parse_errors() {
        let (cfg, truth, data) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &DatasetHeader::from_config(&cfg), &data, Some(&truth)).unwrap();
        let obs = dir.path().join(OBS_FILE);
        let original = fs::read_to_string(&obs).unwrap();

        fs::write(&obs, original.clone() + "0,99,1.0\n").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Parse { .. })));
        fs::write(&obs, original.clone() + "0,1,abc\n").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Parse { .. })));
        let first = original.lines().nth(1).unwrap();
        fs::write(&obs, format!("{original}{first}\n")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Parse { .. })));
        fs::write(&obs, original).unwrap();

        fs::remove_file(dir.path().join(BETA_FILE)).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_header_keys_rejected() {
        let (cfg, _, data) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &DatasetHeader::from_config(&cfg), &data, None).unwrap();
        let path = dir.path().join(HEADER_FILE);
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["bogus"] = serde_json::json!(1);
        fs::write(&path, v.to_string()).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }
}
