//! Market-clustered multiplier bootstrap.
//!
//! Each draw gives every market one multiplier `v_m`, reused for every cell
//! and lag, and perturbs each estimate by `Σ_m v_m ψ_m`. Standard errors are
//! the interquartile range of the perturbations rescaled to a normal sd.
//! Draw `b` uses its own ChaCha stream, so results do not depend on how draws
//! are spread over threads.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::did::{EventStudy, OverallEffect};
use crate::error::{Error, Result};
use crate::io::{csv_writer, fmt_f64};
use crate::model::{EventStudyCurve, LagEstimate};
use crate::stats::{normal_quantile, quantile_linear, sort_floats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    Mammen,
    Rademacher,
}

impl std::str::FromStr for Multiplier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mammen" => Ok(Multiplier::Mammen),
            "rademacher" => Ok(Multiplier::Rademacher),
            _ => Err(Error::Config(format!("unknown multiplier `{s}`"))),
        }
    }
}

impl Multiplier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Multiplier::Mammen => "mammen",
            Multiplier::Rademacher => "rademacher",
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Multiplier::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Multiplier::Mammen => {
                let s5 = 5f64.sqrt();
                let p = (s5 + 1.0) / (2.0 * s5);
                if rng.random::<f64>() < p {
                    -(s5 - 1.0) / 2.0
                } else {
                    (s5 + 1.0) / 2.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Percentile,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub draws: usize,
    pub multiplier: Multiplier,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for BootstrapRun {
    fn default() -> Self {
        BootstrapRun {
            draws: 999,
            multiplier: Multiplier::Mammen,
            seed: 0,
            alpha: 0.05,
        }
    }
}

pub const MIN_DRAWS: usize = 199;

impl BootstrapRun {
    pub fn validate(&self) -> Result<()> {
        if self.draws < MIN_DRAWS {
            return Err(Error::Config(format!(
                "bootstrap draws must be at least {MIN_DRAWS}"
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Config("alpha must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn z(&self) -> f64 {
        normal_quantile(1.0 - self.alpha / 2.0)
    }
}

/// Multipliers of draw `draw` for `n` markets.
pub fn multipliers(run: &BootstrapRun, draw: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    rng.set_stream(draw as u64);
    (0..n).map(|_| run.multiplier.draw(&mut rng)).collect()
}

/// `out[b][k] = Σ_m v_m^b ψ_k[m]` for every draw `b` and series `k`.
pub fn perturbations(run: &BootstrapRun, influence: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    run.validate()?;
    let n = influence.first().map_or(0, |s| s.len());
    if influence.iter().any(|s| s.len() != n) {
        return Err(Error::Domain("influence vectors differ in length".into()));
    }
    if influence.iter().flat_map(|s| s.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite influence contribution".into()));
    }
    Ok((0..run.draws)
        .into_par_iter()
        .map(|b| {
            let v = multipliers(run, b, n);
            influence
                .iter()
                .map(|psi| psi.iter().zip(&v).map(|(p, v)| p * v).sum())
                .collect()
        })
        .collect())
}

fn iqr_scale() -> f64 {
    normal_quantile(0.75) - normal_quantile(0.25)
}

fn robust_se(mut deltas: Vec<f64>) -> f64 {
    sort_floats(&mut deltas);
    (quantile_linear(&deltas, 0.75) - quantile_linear(&deltas, 0.25)) / iqr_scale()
}

/// Standard errors, pointwise intervals and a sup-t simultaneous band.
///
/// The band's critical value is never below the pointwise one, so the band
/// always contains the pointwise interval.
pub fn bootstrap_curve(es: &EventStudy, run: &BootstrapRun) -> Result<EventStudyCurve> {
    let lags: Vec<i32> = es.lags.keys().copied().collect();
    let infl: Vec<&[f64]> = es.lags.values().map(|a| a.influence.as_slice()).collect();
    if infl.iter().any(|s| s.len() != es.n_markets) {
        return Err(Error::Domain("event study lacks influence contributions".into()));
    }
    let pert = perturbations(run, &infl)?;
    let se: Vec<f64> = (0..lags.len())
        .map(|k| robust_se(pert.iter().map(|d| d[k]).collect()))
        .collect();
    let z = run.z();
    let mut tmax: Vec<f64> = pert
        .iter()
        .map(|d| {
            (0..lags.len())
                .filter(|&k| se[k] > 0.0)
                .map(|k| d[k].abs() / se[k])
                .fold(0.0, f64::max)
        })
        .collect();
    sort_floats(&mut tmax);
    let crit = if se.iter().any(|&s| s > 0.0) {
        quantile_linear(&tmax, 1.0 - run.alpha).max(z)
    } else {
        z
    };
    let mut out = BTreeMap::new();
    for (k, (&l, a)) in lags.iter().zip(es.lags.values()).enumerate() {
        out.insert(
            l,
            LagEstimate {
                lag: l,
                beta: a.beta,
                se: se[k],
                pointwise: (a.beta - z * se[k], a.beta + z * se[k]),
                band: (a.beta - crit * se[k], a.beta + crit * se[k]),
                cohort_weights: a.cohort_weights.clone(),
            },
        );
    }
    Ok(EventStudyCurve {
        zeta: es.zeta,
        lags: out,
        sup_t_critical: crit,
    })
}

/// Fills in `se` and `ci` of the overall effect.
pub fn bootstrap_scalar(overall: &mut OverallEffect, run: &BootstrapRun, kind: IntervalKind) -> Result<()> {
    let pert = perturbations(run, &[overall.influence.as_slice()])?;
    let mut d: Vec<f64> = pert.into_iter().map(|v| v[0]).collect();
    let se = robust_se(d.clone());
    let est = overall.estimate;
    let ci = match kind {
        IntervalKind::Symmetric => (est - run.z() * se, est + run.z() * se),
        IntervalKind::Percentile => {
            sort_floats(&mut d);
            (
                est + quantile_linear(&d, run.alpha / 2.0),
                est + quantile_linear(&d, 1.0 - run.alpha / 2.0),
            )
        }
    };
    overall.se = Some(se);
    overall.ci = Some(ci);
    Ok(())
}

pub const EVENT_STUDY_COLUMNS: [&str; 8] = [
    "lag",
    "beta",
    "se",
    "pointwise_lo",
    "pointwise_hi",
    "band_lo",
    "band_hi",
    "n_cohorts",
];

pub fn write_event_study(path: &Path, curve: &EventStudyCurve) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EVENT_STUDY_COLUMNS)?;
    for e in curve.lags.values() {
        w.write_record([
            e.lag.to_string(),
            fmt_f64(e.beta),
            fmt_f64(e.se),
            fmt_f64(e.pointwise.0),
            fmt_f64(e.pointwise.1),
            fmt_f64(e.band.0),
            fmt_f64(e.band.1),
            e.cohort_weights.len().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const OVERALL_COLUMNS: [&str; 7] = [
    "estimate",
    "se",
    "ci_lo",
    "ci_hi",
    "percent",
    "lags",
    "incomplete",
];

/// `percent` is left empty unless the outcome is in logs.
pub fn write_overall(path: &Path, o: &OverallEffect, log_scale: bool) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(OVERALL_COLUMNS)?;
    let (lo, hi) =
        o.ci.map_or((String::new(), String::new()), |(a, b)| (fmt_f64(a), fmt_f64(b)));
    let lags: Vec<String> = o.lags_included.iter().map(i32::to_string).collect();
    w.write_record([
        fmt_f64(o.estimate),
        o.se.map(fmt_f64).unwrap_or_default(),
        lo,
        hi,
        if log_scale {
            fmt_f64(100.0 * o.relative_change())
        } else {
            String::new()
        },
        lags.join("|"),
        if o.incomplete { "1" } else { "0" }.to_string(),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
