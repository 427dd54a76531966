//! Group-time average treatment effects with not-yet-treated controls.
//!
//! A cell ATT(g, t) compares the change in the outcome between the base year
//! `b = g - 1 - zeta` and year `t` for markets first treated in `g` against
//! markets that are still untreated (and not anticipating) by then. Markets
//! never treated inside the sample do not serve as controls.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_writer, fmt_f64, fmt_opt_f64};
use crate::model::{AttCell, MarketKey, MarketYearOutcomes, Outcome};
use crate::stats::{csum, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Equal,
    /// Employment share in the cell's base year.
    EmploymentBase,
    /// Employment share in the cell's outcome year.
    EmploymentOutcome,
}

impl std::str::FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Weighting::Equal),
            "employment" | "employment_base" => Ok(Weighting::EmploymentBase),
            "employment_outcome" => Ok(Weighting::EmploymentOutcome),
            _ => Err(Error::Config(format!("unknown weighting `{s}`"))),
        }
    }
}

/// How the overall post-treatment effect is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallMethod {
    /// Simple mean of the event-study coefficients.
    #[default]
    EventStudy,
    /// Cohort-size weighted mean of the group-time cells at those lags.
    Cells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub zeta: u32,
    /// Largest |lag| estimated on either side of the event.
    pub window: u32,
    pub weighting: Weighting,
    pub outcome: Outcome,
    /// Lags averaged into the overall effect.
    pub overall_lags: Vec<i32>,
    pub overall_method: OverallMethod,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            zeta: 0,
            window: 5,
            weighting: Weighting::EmploymentBase,
            outcome: Outcome::Theta,
            overall_lags: (0..=5).collect(),
            overall_method: OverallMethod::EventStudy,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.overall_lags.is_empty() {
            return Err(Error::Config("overall_lags is empty".into()));
        }
        Ok(())
    }

    pub fn normalization_lag(&self) -> i32 {
        -(self.zeta as i32) - 1
    }
}

/// Balanced market-by-year matrix of one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomePanel {
    pub years: Vec<i32>,
    pub markets: Vec<MarketKey>,
    pub cohort: Vec<Option<i32>>,
    /// `y[m][k]` is the outcome of market `m` in `years[k]`.
    pub y: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    /// Markets removed because the outcome was undefined in some year.
    pub dropped_missing: usize,
}

impl OutcomePanel {
    pub fn new(
        years: Vec<i32>,
        markets: Vec<MarketKey>,
        cohort: Vec<Option<i32>>,
        y: Vec<Vec<f64>>,
        w: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = markets.len();
        if cohort.len() != n || y.len() != n || w.len() != n {
            return Err(Error::Domain("panel dimensions disagree".into()));
        }
        if years.windows(2).any(|p| p[1] != p[0] + 1) {
            return Err(Error::Domain("panel years must be consecutive".into()));
        }
        if y.iter().chain(&w).any(|row| row.len() != years.len()) {
            return Err(Error::Domain("panel row length differs from year count".into()));
        }
        Ok(OutcomePanel {
            years,
            markets,
            cohort,
            y,
            w,
            dropped_missing: 0,
        })
    }

    /// Pivots market-year rows. Markets lacking the outcome in any year are
    /// dropped whole so the panel stays balanced.
    pub fn from_rows(rows: &[MarketYearOutcomes], outcome: Outcome) -> Result<Self> {
        let mut years: Vec<i32> = rows.iter().map(|r| r.year).collect();
        years.sort_unstable();
        years.dedup();
        let pos: BTreeMap<i32, usize> = years.iter().enumerate().map(|(k, &y)| (y, k)).collect();
        type Series = (Option<i32>, Vec<Option<(f64, f64)>>);
        let mut by_market: BTreeMap<&MarketKey, Series> = BTreeMap::new();
        for r in rows {
            let e = by_market
                .entry(&r.market)
                .or_insert_with(|| (r.cohort, vec![None; years.len()]));
            e.1[pos[&r.year]] = r.outcome(outcome).map(|v| (v, r.weight));
        }
        let mut p = OutcomePanel::new(years, vec![], vec![], vec![], vec![])?;
        for (m, (g, vals)) in by_market {
            if vals.iter().any(Option::is_none) {
                p.dropped_missing += 1;
                continue;
            }
            p.markets.push(m.clone());
            p.cohort.push(g);
            p.y.push(vals.iter().map(|v| v.unwrap().0).collect());
            p.w.push(vals.iter().map(|v| v.unwrap().1).collect());
        }
        if p.dropped_missing > 0 {
            info!(
                "{outcome}: dropped {} markets with undefined values",
                p.dropped_missing
            );
        }
        Ok(p)
    }

    pub fn n_markets(&self) -> usize {
        self.markets.len()
    }

    pub fn year_pos(&self, year: i32) -> Option<usize> {
        let first = *self.years.first()?;
        let k = usize::try_from(year - first).ok()?;
        (k < self.years.len()).then_some(k)
    }

    pub fn cohorts(&self) -> Vec<i32> {
        let mut g: Vec<i32> = self.cohort.iter().flatten().copied().collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    pub fn retain_markets(&mut self, mut keep: impl FnMut(&MarketKey, Option<i32>) -> bool) {
        let mask: Vec<bool> = (0..self.n_markets())
            .map(|m| keep(&self.markets[m], self.cohort[m]))
            .collect();
        let mut it = mask.iter();
        self.markets.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.cohort.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.y.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.w.retain(|_| *it.next().unwrap());
    }
}

/// Control membership: eventually treated in another cohort, and neither
/// treated nor anticipating by the later of the outcome and base years.
pub fn is_control(cohort_m: Option<i32>, g: i32, t: i32, zeta: u32) -> bool {
    let base = g - 1 - zeta as i32;
    match cohort_m {
        Some(gm) => gm != g && gm >= t.max(base) + 1 + zeta as i32,
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Unidentified {
    pub g: i32,
    pub t: i32,
    pub base_year: i32,
    pub n_treated: usize,
    pub n_control: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Identified(AttCell),
    Unidentified(Unidentified),
}

impl Cell {
    pub fn g_t(&self) -> (i32, i32) {
        match self {
            Cell::Identified(c) => (c.g, c.t),
            Cell::Unidentified(u) => (u.g, u.t),
        }
    }

    pub fn identified(&self) -> Option<&AttCell> {
        match self {
            Cell::Identified(c) => Some(c),
            Cell::Unidentified(_) => None,
        }
    }
}

/// Weighted mean of `d` over `idx`, plus each member's contribution
/// `w_i (d_i - mean) / W`.
fn weighted_mean_with_influence(idx: &[usize], d: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let total = csum(idx.iter().map(|&i| w[i]));
    let mean = csum(idx.iter().map(|&i| w[i] * d[i])) / total;
    let infl = idx.iter().map(|&i| w[i] * (d[i] - mean) / total).collect();
    (mean, infl)
}

/// ATT(g, t). The influence vector lists treated markets first, then
/// controls; both blocks sum to zero.
pub fn att_gt(panel: &OutcomePanel, g: i32, t: i32, cfg: &EstimatorConfig) -> Result<Cell> {
    let zeta = cfg.zeta;
    let base_year = g - 1 - zeta as i32;
    let kb = panel
        .year_pos(base_year)
        .ok_or_else(|| Error::Identification(format!("base year {base_year} of cohort {g} outside panel")))?;
    let kt = panel
        .year_pos(t)
        .ok_or_else(|| Error::Identification(format!("year {t} outside panel")))?;
    let treated: Vec<usize> = (0..panel.n_markets())
        .filter(|&m| panel.cohort[m] == Some(g))
        .collect();
    let control: Vec<usize> = (0..panel.n_markets())
        .filter(|&m| is_control(panel.cohort[m], g, t, zeta))
        .collect();
    if treated.is_empty() || control.is_empty() {
        warn!(
            "ATT({g},{t}) unidentified: {} treated, {} controls",
            treated.len(),
            control.len()
        );
        return Ok(Cell::Unidentified(Unidentified {
            g,
            t,
            base_year,
            n_treated: treated.len(),
            n_control: control.len(),
        }));
    }
    let k_w = match cfg.weighting {
        Weighting::EmploymentOutcome => kt,
        _ => kb,
    };
    let w: Vec<f64> = match cfg.weighting {
        Weighting::Equal => vec![1.0; panel.n_markets()],
        _ => panel.w.iter().map(|row| row[k_w]).collect(),
    };
    let d: Vec<f64> = panel.y.iter().map(|row| row[kt] - row[kb]).collect();
    let (mt, it) = weighted_mean_with_influence(&treated, &d, &w);
    let (mc, ic) = weighted_mean_with_influence(&control, &d, &w);
    let influence = treated
        .iter()
        .copied()
        .zip(it)
        .chain(control.iter().copied().zip(ic.into_iter().map(|v| -v)))
        .collect();
    Ok(Cell::Identified(AttCell {
        g,
        t,
        zeta,
        base_year,
        estimate: mt - mc,
        influence,
        n_treated: treated.len(),
        n_control: control.len(),
    }))
}

/// Every cell with |t - g| within the window, except the base year itself.
pub fn compute_cells(panel: &OutcomePanel, cfg: &EstimatorConfig) -> Result<Vec<Cell>> {
    cfg.validate()?;
    let w = cfg.window as i32;
    let grid: Vec<(i32, i32)> = panel
        .cohorts()
        .into_iter()
        .filter(|&g| panel.year_pos(g - 1 - cfg.zeta as i32).is_some())
        .flat_map(|g| {
            let b = g - 1 - cfg.zeta as i32;
            (g - w..=g + w)
                .filter(move |&t| t != b)
                .filter(|&t| panel.year_pos(t).is_some())
                .map(move |t| (g, t))
        })
        .collect();
    for g in panel.cohorts() {
        if panel.year_pos(g - 1 - cfg.zeta as i32).is_none() {
            warn!("cohort {g} has no base year in the panel and is skipped");
        }
    }
    grid.into_par_iter()
        .map(|(g, t)| att_gt(panel, g, t, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagAggregate {
    pub lag: i32,
    pub beta: f64,
    pub cohort_weights: Vec<(i32, f64)>,
    /// Per-market influence on `beta`, indexed like the panel's markets.
    #[serde(skip)]
    pub influence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventStudy {
    pub zeta: u32,
    pub n_markets: usize,
    pub lags: BTreeMap<i32, LagAggregate>,
}

/// Cohort-size weighted average of cells by exposure length.
pub fn event_study(panel: &OutcomePanel, cells: &[Cell], cfg: &EstimatorConfig) -> EventStudy {
    let n = panel.n_markets();
    let size = cohort_sizes(panel);
    let mut by_lag: BTreeMap<i32, Vec<&AttCell>> = BTreeMap::new();
    for c in cells.iter().filter_map(Cell::identified) {
        by_lag.entry(c.lag()).or_default().push(c);
    }
    let mut lags = BTreeMap::new();
    let w = cfg.window as i32;
    for l in -w..=w {
        if l == cfg.normalization_lag() {
            lags.insert(
                l,
                LagAggregate {
                    lag: l,
                    beta: 0.0,
                    cohort_weights: vec![],
                    influence: vec![0.0; n],
                },
            );
            continue;
        }
        let Some(cs) = by_lag.get(&l) else {
            info!("lag {l} has no identified cells and is omitted");
            continue;
        };
        let total = cs.iter().map(|c| size[&c.g]).sum::<usize>() as f64;
        let weights: Vec<(i32, f64)> = cs.iter().map(|c| (c.g, size[&c.g] as f64 / total)).collect();
        let beta = csum(cs.iter().zip(&weights).map(|(c, (_, p))| p * c.estimate));
        let mut acc = vec![CompensatedSum::new(); n];
        for (c, (_, p)) in cs.iter().zip(&weights) {
            for &(m, v) in &c.influence {
                acc[m].add(p * v);
            }
        }
        lags.insert(
            l,
            LagAggregate {
                lag: l,
                beta,
                cohort_weights: weights,
                influence: acc.iter().map(CompensatedSum::value).collect(),
            },
        );
    }
    EventStudy {
        zeta: cfg.zeta,
        n_markets: n,
        lags,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverallEffect {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub lags_included: Vec<i32>,
    /// Some requested lags had no estimate.
    pub incomplete: bool,
    #[serde(skip)]
    pub influence: Vec<f64>,
}

impl OverallEffect {
    /// `exp(estimate) - 1`, as a fraction.
    pub fn relative_change(&self) -> f64 {
        relative_change(self.estimate)
    }
}

pub fn relative_change(log_effect: f64) -> f64 {
    log_effect.exp_m1()
}

/// Relative change in percentage points.
pub fn percent_change(log_effect: f64) -> f64 {
    100.0 * relative_change(log_effect)
}

/// Simple mean of the event-study coefficients over the configured lags.
pub fn overall(es: &EventStudy, lags: &[i32]) -> Result<OverallEffect> {
    let present: Vec<&LagAggregate> = lags.iter().filter_map(|l| es.lags.get(l)).collect();
    if present.is_empty() {
        return Err(Error::Identification(
            "no post-treatment lag is identified".into(),
        ));
    }
    let incomplete = present.len() < lags.len();
    if incomplete {
        warn!(
            "overall effect uses {} of {} requested lags",
            present.len(),
            lags.len()
        );
    }
    let k = present.len() as f64;
    let estimate = csum(present.iter().map(|a| a.beta)) / k;
    let influence = (0..es.n_markets)
        .map(|m| csum(present.iter().map(|a| a.influence[m])) / k)
        .collect();
    Ok(OverallEffect {
        estimate,
        se: None,
        ci: None,
        lags_included: present.iter().map(|a| a.lag).collect(),
        incomplete,
        influence,
    })
}

fn cohort_sizes(panel: &OutcomePanel) -> BTreeMap<i32, usize> {
    let mut size: BTreeMap<i32, usize> = BTreeMap::new();
    for g in panel.cohort.iter().flatten() {
        *size.entry(*g).or_default() += 1;
    }
    size
}

/// Mean of every identified cell whose lag is in `lags`, each weighted by the
/// size of its cohort.
pub fn overall_from_cells(panel: &OutcomePanel, cells: &[Cell], lags: &[i32]) -> Result<OverallEffect> {
    let size = cohort_sizes(panel);
    let used: Vec<&AttCell> = cells
        .iter()
        .filter_map(Cell::identified)
        .filter(|c| lags.contains(&c.lag()))
        .collect();
    if used.is_empty() {
        return Err(Error::Identification(
            "no post-treatment cell is identified".into(),
        ));
    }
    let mut present: Vec<i32> = used.iter().map(|c| c.lag()).collect();
    present.sort_unstable();
    present.dedup();
    let incomplete = present.len() < lags.len();
    if incomplete {
        warn!(
            "overall effect uses {} of {} requested lags",
            present.len(),
            lags.len()
        );
    }
    let total = used.iter().map(|c| size[&c.g]).sum::<usize>() as f64;
    let p: Vec<f64> = used.iter().map(|c| size[&c.g] as f64 / total).collect();
    let estimate = csum(used.iter().zip(&p).map(|(c, p)| p * c.estimate));
    let mut acc = vec![CompensatedSum::new(); panel.n_markets()];
    for (c, p) in used.iter().zip(&p) {
        for &(m, v) in &c.influence {
            acc[m].add(p * v);
        }
    }
    Ok(OverallEffect {
        estimate,
        se: None,
        ci: None,
        lags_included: present,
        incomplete,
        influence: acc.iter().map(CompensatedSum::value).collect(),
    })
}

/// The overall effect by the configured method.
pub fn overall_effect(
    panel: &OutcomePanel,
    cells: &[Cell],
    es: &EventStudy,
    cfg: &EstimatorConfig,
) -> Result<OverallEffect> {
    match cfg.overall_method {
        OverallMethod::EventStudy => overall(es, &cfg.overall_lags),
        OverallMethod::Cells => overall_from_cells(panel, cells, &cfg.overall_lags),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CohortStatus {
    pub year: i32,
    pub treated: f64,
    pub not_yet_treated: f64,
    pub never_treated: f64,
}

/// Per-year shares of markets already treated, treated later, and never treated.
pub fn cohort_status_table<'a>(
    cohorts: impl IntoIterator<Item = Option<i32>> + Clone,
    years: impl IntoIterator<Item = i32> + 'a,
) -> Vec<CohortStatus> {
    years
        .into_iter()
        .map(|y| {
            let (mut tr, mut ny, mut nv, mut n) = (0usize, 0usize, 0usize, 0usize);
            for g in cohorts.clone() {
                n += 1;
                match g {
                    Some(g) if g <= y => tr += 1,
                    Some(_) => ny += 1,
                    None => nv += 1,
                }
            }
            let share = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
            CohortStatus {
                year: y,
                treated: share(tr),
                not_yet_treated: share(ny),
                never_treated: share(nv),
            }
        })
        .collect()
}

pub const ATT_COLUMNS: [&str; 8] = [
    "g",
    "t",
    "lag",
    "base_year",
    "estimate",
    "n_treated",
    "n_control",
    "identified",
];

pub fn write_att_gt(path: &Path, cells: &[Cell]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(ATT_COLUMNS)?;
    for c in cells {
        let (g, t, b, est, nt, nc, id) = match c {
            Cell::Identified(a) => (
                a.g,
                a.t,
                a.base_year,
                Some(a.estimate),
                a.n_treated,
                a.n_control,
                "1",
            ),
            Cell::Unidentified(u) => (u.g, u.t, u.base_year, None, u.n_treated, u.n_control, "0"),
        };
        w.write_record([
            g.to_string(),
            t.to_string(),
            (t - g).to_string(),
            b.to_string(),
            fmt_opt_f64(est),
            nt.to_string(),
            nc.to_string(),
            id.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const CONTROL_SET_COLUMNS: [&str; 5] = ["g", "t", "commuting_zone", "industry_code", "role"];

/// Treated and control membership of every identified cell.
pub fn write_control_sets(path: &Path, panel: &OutcomePanel, cells: &[Cell]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CONTROL_SET_COLUMNS)?;
    for c in cells.iter().filter_map(Cell::identified) {
        for (i, &(m, _)) in c.influence.iter().enumerate() {
            let role = if i < c.n_treated { "treated" } else { "control" };
            let key = &panel.markets[m];
            w.write_record([
                c.g.to_string(),
                c.t.to_string(),
                key.commuting_zone.to_string(),
                key.industry_code.to_string(),
                role.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const STATUS_COLUMNS: [&str; 4] = ["year", "treated", "not_yet_treated", "never_treated"];

pub fn write_cohort_status(path: &Path, rows: &[CohortStatus]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(STATUS_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.year.to_string(),
            fmt_f64(r.treated),
            fmt_f64(r.not_yet_treated),
            fmt_f64(r.never_treated),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
