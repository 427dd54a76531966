//! Composition-adjusted market earnings index.
//!
//! For each year, log earnings are regressed on market indicators and worker
//! covariates (female, white, college, high school, age, age squared). Market
//! indicators are absorbed by demeaning within market; the market intercepts
//! θ are recovered from the group means afterwards.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, fmt_f64, fmt_opt_f64, Header};
use crate::model::{JobRecord, MarketKey, Split, Subpop};
use crate::stats::{csum, CompensatedSum};

pub const COVARIATES: [&str; 6] = ["female", "white", "college", "highschool", "age", "age_sq"];
const AGE: usize = 4;
const AGE_SQ: usize = 5;

/// Relative residual norm below which a demeaned column counts as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

/// Least-squares fit with absorbed group intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbedFit {
    pub theta: Vec<f64>,
    /// `None` for columns dropped as collinear after demeaning.
    pub beta: Vec<Option<f64>>,
    pub group_counts: Vec<usize>,
    pub r_squared: f64,
}

/// Regresses `y` on group indicators and the columns of `x` (row-major).
///
/// Groups with no observations get `theta = NaN`.
pub fn absorb_fit(group: &[usize], n_groups: usize, y: &[f64], x: &[Vec<f64>]) -> Result<AbsorbedFit> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Domain("regression without observations".into()));
    }
    let k = x.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; n_groups];
    let mut ysum = vec![CompensatedSum::new(); n_groups];
    let mut xsum = vec![vec![CompensatedSum::new(); k]; n_groups];
    for i in 0..n {
        let g = group[i];
        counts[g] += 1;
        ysum[g].add(y[i]);
        for j in 0..k {
            xsum[g][j].add(x[i][j]);
        }
    }
    let ymean: Vec<f64> = (0..n_groups)
        .map(|g| ysum[g].value() / counts[g] as f64)
        .collect();
    let xmean: Vec<Vec<f64>> = (0..n_groups)
        .map(|g| (0..k).map(|j| xsum[g][j].value() / counts[g] as f64).collect())
        .collect();

    let ydm: Vec<f64> = (0..n).map(|i| y[i] - ymean[group[i]]).collect();
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..n).map(|i| x[i][j] - xmean[group[i]][j]).collect())
        .collect();

    // Gram-Schmidt pass to find columns spanned by earlier ones.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        let norm = csum(c.iter().map(|v| v * v)).sqrt();
        let mut r = c.clone();
        for q in &basis {
            let d = csum(r.iter().zip(q).map(|(a, b)| a * b));
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= d * qi;
            }
        }
        let rnorm = csum(r.iter().map(|v| v * v)).sqrt();
        if norm > 0.0 && rnorm > COLLINEAR_TOL * norm.max(1.0) {
            for v in &mut r {
                *v /= rnorm;
            }
            basis.push(r);
            kept.push(j);
        }
    }

    let mut beta = vec![None; k];
    let mut fitted = vec![0.0; n];
    if !kept.is_empty() {
        let z = DMatrix::from_fn(n, kept.len(), |i, c| cols[kept[c]][i]);
        let qr = z.qr();
        let qty = qr.q().transpose() * DVector::from_column_slice(&ydm);
        let b = qr
            .r()
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Domain("singular covariate matrix".into()))?;
        for (c, &j) in kept.iter().enumerate() {
            beta[j] = Some(b[c]);
            for i in 0..n {
                fitted[i] += cols[j][i] * b[c];
            }
        }
    }

    let theta = (0..n_groups)
        .map(|g| {
            if counts[g] == 0 {
                return f64::NAN;
            }
            ymean[g] - csum((0..k).map(|j| xmean[g][j] * beta[j].unwrap_or(0.0)))
        })
        .collect();
    let ybar = csum(y.iter().copied()) / n as f64;
    let sst = csum(y.iter().map(|v| (v - ybar).powi(2)));
    let ssr = csum((0..n).map(|i| (ydm[i] - fitted[i]).powi(2)));
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    Ok(AbsorbedFit {
        theta,
        beta,
        group_counts: counts,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WageFit {
    pub year: i32,
    pub theta: BTreeMap<MarketKey, f64>,
    pub n_obs_by_market: BTreeMap<MarketKey, usize>,
    /// Coefficients on [`COVARIATES`], in the original (uncentered) age scale.
    pub beta: Vec<Option<f64>>,
    pub dropped: Vec<&'static str>,
    pub n_obs: usize,
    pub r_squared: f64,
}

fn covariates(r: &JobRecord) -> [f64; 6] {
    let age = r.age as f64;
    [
        f64::from(u8::from(r.female)),
        f64::from(u8::from(r.white)),
        f64::from(u8::from(r.college)),
        f64::from(u8::from(r.highschool)),
        age,
        age * age,
    ]
}

/// Fits one year. Age enters centered at the year mean for conditioning; the
/// coefficients and θ are mapped back to the uncentered parameterization, so
/// θ is exactly the market intercept of the uncentered model.
pub fn fit_year(year: i32, records: &[&JobRecord]) -> Result<WageFit> {
    if records.is_empty() {
        return Err(Error::Domain(format!("no wage observations in {year}")));
    }
    let mut markets: BTreeMap<MarketKey, usize> = BTreeMap::new();
    for r in records {
        let next = markets.len();
        markets.entry(r.market()).or_insert(next);
    }
    // Renumber groups in key order so summation order is independent of input order.
    let order: BTreeMap<usize, usize> = markets.values().enumerate().map(|(rank, &g)| (g, rank)).collect();
    for g in markets.values_mut() {
        *g = order[g];
    }
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        let ka = (markets[&records[a].market()], records[a].worker_id.as_str());
        let kb = (markets[&records[b].market()], records[b].worker_id.as_str());
        ka.cmp(&kb)
    });

    let raw: Vec<[f64; 6]> = idx.iter().map(|&i| covariates(records[i])).collect();
    let age_mean = csum(raw.iter().map(|c| c[AGE])) / raw.len() as f64;
    let x: Vec<Vec<f64>> = raw
        .iter()
        .map(|c| {
            let a = c[AGE] - age_mean;
            vec![c[0], c[1], c[2], c[3], a, a * a]
        })
        .collect();
    let y: Vec<f64> = idx.iter().map(|&i| records[i].log_earnings).collect();
    let group: Vec<usize> = idx.iter().map(|&i| markets[&records[i].market()]).collect();
    let fit = absorb_fit(&group, markets.len(), &y, &x)?;

    // age_c = age - m, age_c² = age² - 2m·age + m²; the constant goes to θ.
    let mut beta = fit.beta.clone();
    if let (Some(b_sq), Some(b_lin)) = (fit.beta[AGE_SQ], fit.beta[AGE]) {
        beta[AGE] = Some(b_lin - 2.0 * age_mean * b_sq);
    } else if let Some(b_sq) = fit.beta[AGE_SQ] {
        beta[AGE] = Some(-2.0 * age_mean * b_sq);
    }
    let dropped: Vec<&'static str> = fit
        .beta
        .iter()
        .zip(COVARIATES)
        .filter(|(b, _)| b.is_none())
        .map(|(_, name)| name)
        .collect();
    if !dropped.is_empty() {
        warn!("{year}: dropped collinear covariates {dropped:?}");
    }

    let n_groups = markets.len();
    let mut xsum = vec![[CompensatedSum::new(); 6]; n_groups];
    let mut ysum = vec![CompensatedSum::new(); n_groups];
    for (i, c) in raw.iter().enumerate() {
        ysum[group[i]].add(y[i]);
        for j in 0..6 {
            xsum[group[i]][j].add(c[j]);
        }
    }
    let mut theta = BTreeMap::new();
    let mut n_obs_by_market = BTreeMap::new();
    for (m, &g) in &markets {
        let n = fit.group_counts[g] as f64;
        let xb = csum((0..6).map(|j| xsum[g][j].value() / n * beta[j].unwrap_or(0.0)));
        theta.insert(m.clone(), ysum[g].value() / n - xb);
        n_obs_by_market.insert(m.clone(), fit.group_counts[g]);
    }
    Ok(WageFit {
        year,
        theta,
        n_obs_by_market,
        beta,
        dropped,
        n_obs: records.len(),
        r_squared: fit.r_squared,
    })
}

/// Fits every year present in `records`, in parallel.
pub fn fit_years(records: &[&JobRecord]) -> Result<Vec<WageFit>> {
    let mut by_year: BTreeMap<i32, Vec<&JobRecord>> = BTreeMap::new();
    for r in records {
        by_year.entry(r.year).or_default().push(r);
    }
    by_year.into_par_iter().map(|(y, rs)| fit_year(y, &rs)).collect()
}

pub const THETA_COLUMNS: [&str; 7] = [
    "year",
    "commuting_zone",
    "industry_code",
    "split",
    "subpop",
    "theta",
    "n_obs",
];

pub const BETA_COLUMNS: [&str; 7] = [
    "year",
    "split",
    "subpop",
    "covariate",
    "beta",
    "n_obs",
    "r_squared",
];

pub fn write_theta(path: &Path, fits: &[(Split, Subpop, Vec<WageFit>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(THETA_COLUMNS)?;
    for (split, subpop, years) in fits {
        for f in years {
            for (m, th) in &f.theta {
                w.write_record([
                    f.year.to_string(),
                    m.commuting_zone.to_string(),
                    m.industry_code.to_string(),
                    split.to_string(),
                    subpop.to_string(),
                    fmt_f64(*th),
                    f.n_obs_by_market[m].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// θ keyed by split, subpop, market and year.
pub type ThetaTable = BTreeMap<(Split, Subpop, MarketKey, i32), f64>;

pub fn read_theta(path: &Path) -> Result<ThetaTable> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    h.expect_exact(&THETA_COLUMNS)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.insert(
            (
                h.parse(&rec, 3)?,
                h.parse(&rec, 4)?,
                MarketKey::new(h.field(&rec, 1), h.field(&rec, 2)),
                h.parse(&rec, 0)?,
            ),
            h.parse(&rec, 5)?,
        );
    }
    Ok(out)
}

pub fn write_beta(path: &Path, fits: &[(Split, Subpop, Vec<WageFit>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(BETA_COLUMNS)?;
    for (split, subpop, years) in fits {
        for f in years {
            for (name, b) in COVARIATES.iter().zip(&f.beta) {
                w.write_record([
                    f.year.to_string(),
                    split.to_string(),
                    subpop.to_string(),
                    name.to_string(),
                    fmt_opt_f64(*b),
                    f.n_obs.to_string(),
                    fmt_f64(f.r_squared),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
