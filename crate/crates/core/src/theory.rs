//! Rate-driven parameter recipes and regime classification, with every
//! hidden constant set to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Few rows: regressing each row on its own is rate optimal.
    RowOnly,
    /// Moderate row counts: the estimator matches the oracle rate.
    OracleMatching,
    /// Many rows: accuracy is capped by how well distances can be estimated.
    DistanceLimited,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub lambda: f64,
    pub lipschitz: f64,
    pub d1: usize,
    pub d2: usize,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub lambda: f64,
    pub lipschitz: f64,
    pub regime: Regime,
    pub h: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Distance-estimation error scale.
    pub delta: f64,
    /// `(mp)^(d1 / (2 lambda + d2))`.
    pub row_only_threshold: f64,
    /// `(mp)^min((2 lambda + d1)/d2, (2 d1 + d2)/(4 lambda + d2))`.
    pub oracle_threshold: f64,
}

/// Bandwidth, thresholds and regime for an `n x m` problem.
///
/// * `h = (pm / ln(mn))^(-min(1/d2, 2/(d2 + 4 lambda)))`
/// * oracle-matching: `eta1 = eta2^lambda = (pnm)^(-lambda/(2 lambda + d1 + d2))`
/// * distance-limited: `eta1 = 2 h^lambda`, `eta2 = h`
/// * row-only: `eta1 = 0`, `eta2 = h/2`, i.e. the row smoother's own window
///
/// The side conditions on window occupancy are reported through `h` and
/// `delta` but not enforced.
pub fn theory_params(inp: &TheoryInputs) -> Result<TheoryParams> {
    let TheoryInputs {
        n,
        m,
        p,
        lambda,
        lipschitz,
        d1,
        d2,
        sigma,
    } = *inp;
    if n == 0 || m == 0 || d1 == 0 || d2 == 0 {
        return Err(Error::config("n, m, d1 and d2 must be positive"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::config(format!("p={p} must lie in (0, 1]")));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::config(format!("lambda={lambda} must lie in (0, 1]")));
    }
    if !(lipschitz > 0.0 && sigma > 0.0) {
        return Err(Error::config("L and sigma must be positive"));
    }
    let (nf, mf, d1f, d2f) = (n as f64, m as f64, d1 as f64, d2 as f64);
    let mp = mf * p;
    let log_nm = (mf * nf).ln().max(f64::MIN_POSITIVE);

    let row_only_threshold = mp.powf(d1f / (2.0 * lambda + d2f));
    let oracle_exp = ((2.0 * lambda + d1f) / d2f).min((2.0 * d1f + d2f) / (4.0 * lambda + d2f));
    let oracle_threshold = mp.powf(oracle_exp);
    let regime = if nf <= row_only_threshold {
        Regime::RowOnly
    } else if nf <= oracle_threshold {
        Regime::OracleMatching
    } else {
        Regime::DistanceLimited
    };

    let ratio = mp / log_nm;
    let h = ratio.powf(-(1.0 / d2f).min(2.0 / (d2f + 4.0 * lambda)));
    let scale = lipschitz * lipschitz * mp
        / (sigma * sigma * 2f64.powf(1.5 * d2f + 2.0 * lambda - 2.0) * log_nm);
    let delta = ratio
        .powf(-lambda / d2f)
        .max(scale.powf(-2.0 * lambda / (d2f + 4.0 * lambda)));

    let (eta1, eta2) = match regime {
        Regime::RowOnly => (0.0, h / 2.0),
        Regime::OracleMatching => {
            let eta2 = (p * nf * mf).powf(-1.0 / (2.0 * lambda + d1f + d2f));
            (eta2.powf(lambda), eta2)
        }
        Regime::DistanceLimited => (2.0 * h.powf(lambda), h),
    };
    Ok(TheoryParams {
        lambda,
        lipschitz,
        regime,
        h,
        eta1,
        eta2,
        delta,
        row_only_threshold,
        oracle_threshold,
    })
}
