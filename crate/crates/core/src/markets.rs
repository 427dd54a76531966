//! Local labor markets: employment concentration, predicted concentration
//! changes of mergers, treatment cohorts and the balanced market-year panel.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::MergerEvent;
use crate::io::{csv_reader, csv_writer, fmt_f64, fmt_opt_f64, Header};
use crate::model::{
    CohortMap, Id, JobRecord, MarketKey, MarketYearOutcomes, Outcome, Split, Subpop, YearWindow,
};
use crate::stats::{quantile_lower, sort_floats};

/// HHI of a market served by a single employer.
pub const MONOPSONY_HHI: f64 = 10_000.0;

/// Herfindahl-Hirschman index of percentage shares.
pub fn hhi(shares: &[f64]) -> Result<f64> {
    if shares.is_empty() {
        return Err(Error::Domain("HHI of a market without employers".into()));
    }
    Ok(shares.iter().map(|s| s * s).sum())
}

/// Number of equally sized employers that would produce HHI `h`.
pub fn equivalent_employers(h: f64) -> Result<f64> {
    if !(h > 0.0 && h <= MONOPSONY_HHI) {
        return Err(Error::Domain(format!("HHI {h} outside (0, 10000]")));
    }
    Ok(MONOPSONY_HHI / h)
}

/// HHI increase when two employers with shares `s1`, `s2` (percent) merge
/// and employment does not respond.
pub fn merger_increment(s1: f64, s2: f64) -> f64 {
    2.0 * s1 * s2
}

/// Share of each of two equally sized merging employers producing an HHI
/// increase of `delta` points.
pub fn equal_share_for_increment(delta: f64) -> f64 {
    (delta / 2.0).sqrt()
}

/// Increase from combining all `shares` into one employer: the sum of
/// `2·s_i·s_j` over pairs.
pub fn combined_increment(shares: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, si) in shares.iter().enumerate() {
        for sj in &shares[i + 1..] {
            total += merger_increment(*si, *sj);
        }
    }
    total
}

/// Firm head counts per market-year.
pub type FirmCounts = BTreeMap<Id, u64>;

/// Dec-31 head counts per (market, year, firm), aggregated in parallel.
/// Integer counts make the reduction order irrelevant.
pub fn firm_employment<'a, I>(records: I) -> BTreeMap<(MarketKey, i32), FirmCounts>
where
    I: IntoParallelIterator<Item = &'a JobRecord>,
{
    let grouped: HashMap<(MarketKey, i32), HashMap<Id, u64>> = records
        .into_par_iter()
        .filter(|r| r.active_dec31)
        .fold(
            HashMap::new,
            |mut acc: HashMap<(MarketKey, i32), HashMap<Id, u64>>, r| {
                *acc.entry((r.market(), r.year))
                    .or_default()
                    .entry(r.firm_id.clone())
                    .or_default() += 1;
                acc
            },
        )
        .reduce(HashMap::new, |mut a, b| {
            for (k, firms) in b {
                let slot = a.entry(k).or_default();
                for (f, n) in firms {
                    *slot.entry(f).or_default() += n;
                }
            }
            a
        });
    grouped
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect()
}

/// Percentage shares, in firm-id order.
pub fn shares_percent(firms: &FirmCounts) -> Vec<(Id, f64)> {
    let total: u64 = firms.values().sum();
    firms
        .iter()
        .map(|(f, n)| (f.clone(), 100.0 * *n as f64 / total as f64))
        .collect()
}

pub fn hhi_of_counts(firms: &FirmCounts) -> Option<f64> {
    let shares: Vec<f64> = shares_percent(firms).into_iter().map(|(_, s)| s).collect();
    hhi(&shares).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HhiRow {
    pub market: MarketKey,
    pub year: i32,
    pub hhi: f64,
    pub n_firms: u64,
    pub employment: u64,
}

pub fn hhi_table(counts: &BTreeMap<(MarketKey, i32), FirmCounts>) -> Vec<HhiRow> {
    counts
        .iter()
        .filter_map(|((m, y), firms)| {
            Some(HhiRow {
                market: m.clone(),
                year: *y,
                hhi: hhi_of_counts(firms)?,
                n_firms: firms.len() as u64,
                employment: firms.values().sum(),
            })
        })
        .collect()
}

/// Predicted HHI change in one market-year from combining each group of
/// merging parties into a single employer. Groups sharing a firm are joined
/// first, since a firm cannot be absorbed twice.
pub fn simulated_increment(firms: &FirmCounts, groups: &[BTreeSet<Id>]) -> f64 {
    let shares: BTreeMap<Id, f64> = shares_percent(firms).into_iter().collect();
    let mut merged: Vec<BTreeSet<Id>> = Vec::new();
    for g in groups {
        let mut g = g.clone();
        let (overlapping, rest): (Vec<_>, Vec<_>) = merged.into_iter().partition(|m| !m.is_disjoint(&g));
        for o in overlapping {
            g.extend(o);
        }
        merged = rest;
        merged.push(g);
    }
    merged
        .iter()
        .map(|g| {
            let s: Vec<f64> = g.iter().filter_map(|f| shares.get(f).copied()).collect();
            combined_increment(&s)
        })
        .sum()
}

/// Per-market predicted HHI change of `event`, using shares in the year
/// before the event. `None` when the counterpart is unknown or a market has
/// no employment that year.
pub fn predicted_delta_hhi(
    event: &MergerEvent,
    counts: &BTreeMap<(MarketKey, i32), FirmCounts>,
) -> Option<BTreeMap<MarketKey, f64>> {
    event.counterpart_firm.as_ref()?;
    let parties: BTreeSet<Id> = event.parties().into_iter().cloned().collect();
    let mut out = BTreeMap::new();
    for m in &event.markets {
        let Some(firms) = counts.get(&(m.clone(), event.event_year - 1)) else {
            warn!(
                "no employment in {m} in {}; event of {} left unclassified",
                event.event_year - 1,
                event.target_firm
            );
            return None;
        };
        out.insert(
            m.clone(),
            simulated_increment(firms, std::slice::from_ref(&parties)),
        );
    }
    Some(out)
}

/// Event-level predicted change: the largest change across the event's markets.
pub fn event_delta(per_market: &BTreeMap<MarketKey, f64>) -> f64 {
    per_market.values().copied().fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    OutOfMarket,
    Mid,
    HighImpact,
}

impl EventClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventClass::OutOfMarket => "out_of_market",
            EventClass::Mid => "mid",
            EventClass::HighImpact => "high_impact",
        }
    }
}

impl std::str::FromStr for EventClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "out_of_market" => Ok(EventClass::OutOfMarket),
            "mid" => Ok(EventClass::Mid),
            "high_impact" => Ok(EventClass::HighImpact),
            _ => Err(Error::Config(format!("unknown event class `{s}`"))),
        }
    }
}

/// Percentiles reported for the predicted-change distribution.
pub const REPORTED_PERCENTILES: [f64; 6] = [50.0, 75.0, 80.0, 85.0, 90.0, 95.0];
pub const DEFAULT_HIGH_IMPACT_PERCENTILE: f64 = 85.0;
pub const MIN_EVENTS_FOR_PERCENTILES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    /// `(percentile, value)` pairs, lower empirical quantile.
    pub percentiles: Vec<(f64, f64)>,
    pub high_impact_percentile: f64,
    pub threshold: Option<f64>,
    pub classes: Vec<Option<EventClass>>,
    pub small_sample: bool,
}

pub fn classify_delta(delta: f64, threshold: f64) -> EventClass {
    if delta == 0.0 {
        EventClass::OutOfMarket
    } else if delta >= threshold {
        EventClass::HighImpact
    } else {
        EventClass::Mid
    }
}

/// Classifies events by predicted HHI change. Unclassifiable events (`None`)
/// stay `None` and do not enter the percentiles.
pub fn classify_events(deltas: &[Option<f64>], high_impact_percentile: f64) -> Classification {
    let mut known: Vec<f64> = deltas.iter().flatten().copied().collect();
    sort_floats(&mut known);
    let small_sample = known.len() < MIN_EVENTS_FOR_PERCENTILES;
    if small_sample {
        warn!(
            "only {} classifiable events; percentiles are unreliable",
            known.len()
        );
    }
    let (percentiles, threshold) = if known.is_empty() {
        (Vec::new(), None)
    } else {
        let mut ps: Vec<f64> = REPORTED_PERCENTILES.to_vec();
        if !ps.contains(&high_impact_percentile) {
            ps.push(high_impact_percentile);
            ps.sort_by(f64::total_cmp);
        }
        (
            ps.iter()
                .map(|p| (*p, quantile_lower(&known, p / 100.0)))
                .collect(),
            Some(quantile_lower(&known, high_impact_percentile / 100.0)),
        )
    };
    let classes = deltas
        .iter()
        .map(|d| d.map(|d| classify_delta(d, threshold.unwrap_or(f64::INFINITY))))
        .collect();
    Classification {
        percentiles,
        high_impact_percentile,
        threshold,
        classes,
        small_sample,
    }
}

/// First event year per market. Every market in `universe` gets an entry;
/// markets without events are never treated.
pub fn assign_cohorts<'a>(
    events: &[MergerEvent],
    universe: impl IntoIterator<Item = &'a MarketKey>,
) -> CohortMap {
    let mut first: BTreeMap<MarketKey, i32> = BTreeMap::new();
    for e in events {
        for m in &e.markets {
            first
                .entry(m.clone())
                .and_modify(|g| *g = (*g).min(e.event_year))
                .or_insert(e.event_year);
        }
    }
    let mut map = CohortMap::new();
    for m in universe {
        map.assign(m.clone(), first.get(m).copied())
            .expect("each market assigned once");
    }
    for (m, g) in first {
        if map.get(&m).is_none() {
            map.assign(m, Some(g)).expect("each market assigned once");
        }
    }
    map
}

/// Every firm party to any event touching each market.
pub fn merging_roster(events: &[MergerEvent]) -> BTreeMap<MarketKey, BTreeSet<Id>> {
    let mut out: BTreeMap<MarketKey, BTreeSet<Id>> = BTreeMap::new();
    for e in events {
        for m in &e.markets {
            out.entry(m.clone())
                .or_default()
                .extend(e.parties().into_iter().cloned());
        }
    }
    out
}

/// Class of each treated market, from the predicted change of the events
/// dated at its first treatment year. Markets whose first-year events cannot
/// be classified map to `None`.
pub fn classify_markets(
    events: &[MergerEvent],
    cohorts: &CohortMap,
    counts: &BTreeMap<(MarketKey, i32), FirmCounts>,
    threshold: Option<f64>,
) -> BTreeMap<MarketKey, Option<EventClass>> {
    let mut groups: BTreeMap<MarketKey, Option<Vec<BTreeSet<Id>>>> = BTreeMap::new();
    for e in events {
        for m in &e.markets {
            if cohorts.get(m).flatten() != Some(e.event_year) {
                continue;
            }
            let slot = groups.entry(m.clone()).or_insert_with(|| Some(Vec::new()));
            match (slot.as_mut(), e.counterpart_firm.is_some()) {
                (Some(gs), true) => gs.push(e.parties().into_iter().cloned().collect()),
                _ => *slot = None,
            }
        }
    }
    groups
        .into_iter()
        .map(|(m, gs)| {
            let g = cohorts.get(&m).flatten().expect("grouped markets are treated");
            let class = gs.and_then(|gs| {
                let firms = counts.get(&(m.clone(), g - 1))?;
                let delta = simulated_increment(firms, &gs);
                Some(classify_delta(delta, threshold.unwrap_or(f64::INFINITY)))
            });
            (m, class)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelSpec {
    pub window: YearWindow,
    pub split: Split,
    pub subpop: Subpop,
    pub tradable_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    pub split: Split,
    pub subpop: Subpop,
    pub window: YearWindow,
    /// Sorted by (market, year); every retained market has every window year.
    pub rows: Vec<MarketYearOutcomes>,
    /// Markets lacking positive employment in some window year.
    pub dropped_unbalanced: Vec<MarketKey>,
}

impl MarketPanel {
    pub fn markets(&self) -> impl Iterator<Item = &MarketKey> {
        self.rows.iter().step_by(self.window.len()).map(|r| &r.market)
    }

    pub fn n_markets(&self) -> usize {
        self.rows.len() / self.window.len()
    }
}

#[derive(Default)]
struct Cell {
    firms: FirmCounts,
    hires: u64,
    separations: u64,
}

/// Builds the balanced market-year panel for one (split, subpop) slice.
pub fn build_market_panel(
    jobs: &[JobRecord],
    separations: &[JobRecord],
    cohorts: &CohortMap,
    roster: &BTreeMap<MarketKey, BTreeSet<Id>>,
    spec: &PanelSpec,
) -> MarketPanel {
    let empty = BTreeSet::new();
    let in_split = |r: &JobRecord, m: &MarketKey| {
        let merging = roster.get(m).unwrap_or(&empty).contains(&r.firm_id);
        match spec.split {
            Split::All => true,
            Split::Merging => merging,
            Split::Spillover => !merging,
        }
    };
    let keep = |r: &JobRecord| {
        spec.window.contains(r.year)
            && (!spec.tradable_only || r.tradable)
            && spec.subpop.admits(r.tenure_months, r.admission_type)
    };

    let mut cells: BTreeMap<MarketKey, BTreeMap<i32, Cell>> = BTreeMap::new();
    for r in jobs.iter().filter(|r| r.active_dec31 && keep(r)) {
        let m = r.market();
        if !in_split(r, &m) {
            continue;
        }
        let cell = cells.entry(m).or_default().entry(r.year).or_default();
        *cell.firms.entry(r.firm_id.clone()).or_default() += 1;
        if r.flows().new_hire {
            cell.hires += 1;
        }
    }
    for r in separations.iter().filter(|r| r.flows().separation && keep(r)) {
        let m = r.market();
        if !in_split(r, &m) {
            continue;
        }
        if let Some(years) = cells.get_mut(&m) {
            years.entry(r.year).or_default().separations += 1;
        }
    }

    let mut dropped_unbalanced = Vec::new();
    let mut kept: Vec<(MarketKey, BTreeMap<i32, Cell>)> = Vec::new();
    for (m, years) in cells {
        let balanced = spec
            .window
            .years()
            .all(|y| years.get(&y).is_some_and(|c| c.firms.values().sum::<u64>() > 0));
        if balanced {
            kept.push((m, years));
        } else {
            dropped_unbalanced.push(m);
        }
    }

    let mut totals: BTreeMap<i32, u64> = BTreeMap::new();
    for (_, years) in &kept {
        for (y, c) in years {
            if spec.window.contains(*y) {
                *totals.entry(*y).or_default() += c.firms.values().sum::<u64>();
            }
        }
    }
    let mut rows = Vec::with_capacity(kept.len() * spec.window.len());
    for (m, years) in kept {
        let g = cohorts.get(&m).flatten();
        for y in spec.window.years() {
            let c = &years[&y];
            let employment: u64 = c.firms.values().sum();
            rows.push(MarketYearOutcomes {
                market: m.clone(),
                year: y,
                cohort: g,
                employment,
                n_firms: c.firms.len() as u64,
                hhi: hhi_of_counts(&c.firms).expect("balanced cells are nonempty"),
                theta: None,
                hires: c.hires,
                separations: c.separations,
                weight: employment as f64 / totals[&y] as f64,
                split: spec.split,
                subpop: spec.subpop,
            });
        }
    }
    if !dropped_unbalanced.is_empty() {
        warn!(
            "{} markets dropped from the {}/{} panel for missing employment",
            dropped_unbalanced.len(),
            spec.split,
            spec.subpop
        );
    }
    MarketPanel {
        split: spec.split,
        subpop: spec.subpop,
        window: spec.window,
        rows,
        dropped_unbalanced,
    }
}

pub const PANEL_COLUMNS: [&str; 17] = [
    "commuting_zone",
    "industry_code",
    "year",
    "cohort",
    "split",
    "subpop",
    "employment",
    "n_firms",
    "hhi",
    "hires",
    "separations",
    "weight",
    "theta",
    "log_employment",
    "log_n_firms",
    "log_hires",
    "log_separations",
];

pub fn write_panel(path: &Path, rows: &[MarketYearOutcomes]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(PANEL_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.market.commuting_zone.to_string(),
            r.market.industry_code.to_string(),
            r.year.to_string(),
            r.cohort.map(|g| g.to_string()).unwrap_or_default(),
            r.split.to_string(),
            r.subpop.to_string(),
            r.employment.to_string(),
            r.n_firms.to_string(),
            fmt_f64(r.hhi),
            r.hires.to_string(),
            r.separations.to_string(),
            fmt_f64(r.weight),
            fmt_opt_f64(r.theta),
            fmt_opt_f64(r.outcome(Outcome::LogEmployment)),
            fmt_opt_f64(r.outcome(Outcome::LogFirms)),
            fmt_opt_f64(r.outcome(Outcome::LogHires)),
            fmt_opt_f64(r.outcome(Outcome::LogSeparations)),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_panel(path: &Path) -> Result<Vec<MarketYearOutcomes>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    h.expect_exact(&PANEL_COLUMNS)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(MarketYearOutcomes {
            market: MarketKey::new(h.field(&rec, 0), h.field(&rec, 1)),
            year: h.parse(&rec, 2)?,
            cohort: h.parse_opt(&rec, 3)?,
            split: h.parse(&rec, 4)?,
            subpop: h.parse(&rec, 5)?,
            employment: h.parse(&rec, 6)?,
            n_firms: h.parse(&rec, 7)?,
            hhi: h.parse(&rec, 8)?,
            hires: h.parse(&rec, 9)?,
            separations: h.parse(&rec, 10)?,
            weight: h.parse(&rec, 11)?,
            theta: h.parse_opt(&rec, 12)?,
        });
    }
    Ok(out)
}

pub const HHI_COLUMNS: [&str; 6] = [
    "commuting_zone",
    "industry_code",
    "year",
    "hhi",
    "n_firms",
    "employment",
];

pub fn write_hhi(path: &Path, rows: &[HhiRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HHI_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.market.commuting_zone.to_string(),
            r.market.industry_code.to_string(),
            r.year.to_string(),
            fmt_f64(r.hhi),
            r.n_firms.to_string(),
            r.employment.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const EVENT_CLASS_COLUMNS: [&str; 5] = ["event_id", "target_firm", "event_year", "delta_hhi", "class"];

/// One row per event, in the order of `events.csv`.
pub fn write_event_classes(
    path: &Path,
    events: &[MergerEvent],
    deltas: &[Option<f64>],
    classes: &[Option<EventClass>],
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EVENT_CLASS_COLUMNS)?;
    for (i, e) in events.iter().enumerate() {
        w.write_record([
            i.to_string(),
            e.target_firm.to_string(),
            e.event_year.to_string(),
            fmt_opt_f64(deltas[i]),
            classes[i].map(|c| c.as_str()).unwrap_or_default().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const PERCENTILE_COLUMNS: [&str; 4] = ["percentile", "delta_hhi", "n_events", "small_sample"];

pub fn write_percentiles(path: &Path, c: &Classification) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(PERCENTILE_COLUMNS)?;
    let n = c.classes.iter().flatten().count();
    for (p, v) in &c.percentiles {
        w.write_record([
            fmt_f64(*p),
            fmt_f64(*v),
            n.to_string(),
            u8::from(c.small_sample).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const COHORT_COLUMNS: [&str; 4] = ["commuting_zone", "industry_code", "cohort", "class"];

/// Treatment cohort and merger class of each market.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarketAssignment {
    pub market: MarketKey,
    pub cohort: Option<i32>,
    pub class: Option<EventClass>,
}

pub fn write_cohorts(path: &Path, rows: &[MarketAssignment]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(COHORT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.market.commuting_zone.to_string(),
            r.market.industry_code.to_string(),
            r.cohort.map(|g| g.to_string()).unwrap_or_default(),
            r.class.map(|c| c.as_str()).unwrap_or_default().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_cohorts(path: &Path) -> Result<Vec<MarketAssignment>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    h.expect_exact(&COHORT_COLUMNS)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(MarketAssignment {
            market: MarketKey::new(h.field(&rec, 0), h.field(&rec, 1)),
            cohort: h.parse_opt(&rec, 2)?,
            class: h.parse_opt(&rec, 3)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use llmerge_oracle::{hhi_by_scan, simulated_hhi_change, OracleJob};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hhi_basic_values() {
        assert_eq!(hhi(&[100.0]).unwrap(), 10_000.0);
        assert_eq!(hhi(&[50.0, 50.0]).unwrap(), 5_000.0);
        // 3600 + 900 + 100
        assert!(close(hhi(&[60.0, 30.0, 10.0]).unwrap(), 4_600.0, 1e-9));
        assert!(hhi(&[]).is_err());
    }

    #[test]
    fn equivalent_employer_counts() {
        assert_eq!(equivalent_employers(10_000.0).unwrap(), 1.0);
        assert_eq!(equivalent_employers(2_500.0).unwrap(), 4.0);
        let n = equivalent_employers(2_847.50).unwrap();
        assert_eq!((n * 100.0).round() / 100.0, 3.51);
        assert!(equivalent_employers(0.0).is_err());
        assert!(equivalent_employers(-3.0).is_err());
    }

    #[test]
    fn merger_increment_and_inverse() {
        assert_eq!(merger_increment(10.0, 20.0), 400.0);
        assert_eq!(merger_increment(0.0, 35.0), 0.0);
        let s = equal_share_for_increment(5.53);
        assert!(close(s, 1.663, 5e-4));
        assert!(close(merger_increment(s, s), 5.53, 1e-9));
    }

    fn counts(pairs: &[(&str, u64)]) -> FirmCounts {
        pairs.iter().map(|(f, n)| (Id::from(*f), *n)).collect()
    }

    fn parties(fs: &[&str]) -> BTreeSet<Id> {
        fs.iter().map(|f| Id::from(*f)).collect()
    }

    #[test]
    fn predicted_change_examples() {
        let c = counts(&[("A", 10), ("B", 20), ("C", 70)]);
        assert!(close(
            simulated_increment(&c, &[parties(&["A", "B"])]),
            400.0,
            1e-9
        ));
        // Counterpart absent from the market.
        assert_eq!(simulated_increment(&c, &[parties(&["A", "Z"])]), 0.0);
        let c3 = counts(&[("A", 10), ("B", 10), ("C", 10), ("D", 70)]);
        assert!(close(
            simulated_increment(&c3, &[parties(&["A", "B", "C"])]),
            600.0,
            1e-9
        ));
        // Two events sharing a party collapse into one employer.
        assert!(close(
            simulated_increment(&c3, &[parties(&["A", "B"]), parties(&["B", "C"])]),
            600.0,
            1e-9
        ));
    }

    #[test]
    fn table_two_percentiles() {
        let mut ds = Vec::new();
        for (n, v) in [
            (50, 0.00),
            (25, 0.10),
            (5, 0.87),
            (5, 5.53),
            (5, 42.55),
            (5, 333.11),
            (5, 1000.0),
        ] {
            ds.extend(std::iter::repeat_n(Some(v), n));
        }
        let c = classify_events(&ds, 85.0);
        let get = |p: f64| c.percentiles.iter().find(|(q, _)| *q == p).unwrap().1;
        assert_eq!(get(50.0), 0.00);
        assert_eq!(get(75.0), 0.10);
        assert_eq!(get(80.0), 0.87);
        assert_eq!(get(85.0), 5.53);
        assert_eq!(get(90.0), 42.55);
        assert_eq!(get(95.0), 333.11);
        assert_eq!(c.threshold, Some(5.53));
        assert!(!c.small_sample);
        let n_high = c
            .classes
            .iter()
            .filter(|k| **k == Some(EventClass::HighImpact))
            .count();
        assert_eq!(n_high, 20);
    }

    #[test]
    fn all_zero_deltas_are_out_of_market() {
        let c = classify_events(&[Some(0.0); 25], 85.0);
        assert!(c.classes.iter().all(|k| *k == Some(EventClass::OutOfMarket)));
        let few = classify_events(&[Some(0.0), None], 85.0);
        assert!(few.small_sample);
        assert_eq!(few.classes[1], None);
    }

    fn event(markets: &[(&str, &str)], year: i32) -> MergerEvent {
        MergerEvent {
            target_establishments: BTreeSet::new(),
            target_firm: "T".into(),
            counterpart_firm: Some("C".into()),
            event_year: year,
            markets: markets.iter().map(|(z, i)| MarketKey::new(*z, *i)).collect(),
            within_market: Some(true),
            n_workers: 0,
            n_reemployed: 0,
            n_to_counterpart: 0,
            tie: false,
        }
    }

    #[test]
    fn cohorts_use_first_event() {
        let m = MarketKey::new("Z", "100");
        let n = MarketKey::new("Z", "200");
        let events = vec![
            event(&[("Z", "100")], 2011),
            event(&[("Z", "100")], 2008),
            event(&[("Z", "100")], 2008),
        ];
        let c = assign_cohorts(&events, [&m, &n]);
        assert_eq!(c.get(&m), Some(Some(2008)));
        assert_eq!(c.get(&n), Some(None));
        assert_eq!(c.groups(), vec![2008]);
    }

    fn job(firm: &str, year: i32, worker: usize) -> JobRecord {
        JobRecord {
            worker_id: format!("w{worker}").into(),
            firm_id: firm.into(),
            establishment_id: format!("{firm}0001").into(),
            year,
            city_code: "1".into(),
            commuting_zone: "Z".into(),
            industry_code: "100".into(),
            tradable: true,
            log_earnings: 8.0,
            tenure_months: 40,
            admission_type: 1,
            separation_code: None,
            active_dec31: true,
            age: 30,
            female: false,
            white: true,
            college: false,
            highschool: false,
        }
    }

    #[test]
    fn spillover_panel_subtracts_merging_firms() {
        let window = YearWindow::new(2008, 2008).unwrap();
        let mut jobs = Vec::new();
        for w in 0..40 {
            jobs.push(job("MERGE", 2008, w));
        }
        for w in 40..100 {
            jobs.push(job("OTHER", 2008, w));
        }
        let m = MarketKey::new("Z", "100");
        let roster: BTreeMap<_, _> = [(m.clone(), parties(&["MERGE"]))].into_iter().collect();
        let cohorts = CohortMap::new();
        let spec = |split| PanelSpec {
            window,
            split,
            subpop: Subpop::All,
            tradable_only: false,
        };
        let spill = build_market_panel(&jobs, &[], &cohorts, &roster, &spec(Split::Spillover));
        assert_eq!(spill.rows[0].employment, 60);
        assert_eq!(spill.rows[0].hhi, 10_000.0);
        let merging = build_market_panel(&jobs, &[], &cohorts, &roster, &spec(Split::Merging));
        assert_eq!(merging.rows[0].employment, 40);
        let all = build_market_panel(&jobs, &[], &cohorts, &roster, &spec(Split::All));
        assert_eq!(all.rows[0].employment, 100);
        assert!(close(all.rows[0].hhi, 1600.0 + 3600.0, 1e-9));
    }

    #[test]
    fn weights_and_balancing() {
        let window = YearWindow::new(2008, 2009).unwrap();
        let mut jobs = Vec::new();
        let mut w = 0;
        for (cz, n) in [("A", 300), ("B", 700)] {
            for y in [2008, 2009] {
                for _ in 0..n {
                    let mut j = job("F", y, w);
                    j.commuting_zone = cz.into();
                    jobs.push(j);
                    w += 1;
                }
            }
        }
        // C is missing 2009 and must be dropped.
        let mut j = job("F", 2008, w);
        j.commuting_zone = "C".into();
        jobs.push(j);
        let spec = PanelSpec {
            window,
            split: Split::All,
            subpop: Subpop::All,
            tradable_only: false,
        };
        let p = build_market_panel(&jobs, &[], &CohortMap::new(), &BTreeMap::new(), &spec);
        assert_eq!(p.n_markets(), 2);
        assert_eq!(p.dropped_unbalanced, vec![MarketKey::new("C", "100")]);
        let ws: Vec<f64> = p
            .rows
            .iter()
            .filter(|r| r.year == 2008)
            .map(|r| r.weight)
            .collect();
        assert!(close(ws[0], 0.3, 1e-12) && close(ws[1], 0.7, 1e-12));
    }

    #[test]
    fn zero_hire_cells_have_no_log_outcome() {
        let window = YearWindow::new(2008, 2008).unwrap();
        let jobs = vec![job("F", 2008, 0)];
        let spec = PanelSpec {
            window,
            split: Split::All,
            subpop: Subpop::All,
            tradable_only: false,
        };
        let p = build_market_panel(&jobs, &[], &CohortMap::new(), &BTreeMap::new(), &spec);
        assert_eq!(p.rows[0].outcome(Outcome::LogHires), None);
        assert_eq!(p.rows[0].outcome(Outcome::LogEmployment), Some(0.0));
    }

    #[test]
    fn panel_file_round_trip() {
        let window = YearWindow::new(2008, 2009).unwrap();
        let jobs: Vec<_> = (0..5)
            .flat_map(|w| [job("F", 2008, w), job("G", 2009, w)])
            .collect();
        let spec = PanelSpec {
            window,
            split: Split::All,
            subpop: Subpop::All,
            tradable_only: false,
        };
        let mut p = build_market_panel(&jobs, &[], &CohortMap::new(), &BTreeMap::new(), &spec);
        p.rows[0].theta = Some(0.1 + 0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        write_panel(&path, &p.rows).unwrap();
        assert_eq!(read_panel(&path).unwrap(), p.rows);
    }

    prop_compose! {
        fn arb_counts()(ns in proptest::collection::vec(1u64..500, 1..12)) -> FirmCounts {
            ns.into_iter().enumerate().map(|(i, n)| (Id::new(format!("F{i:02}")), n)).collect()
        }
    }

    proptest! {
        #[test]
        fn pair_formula_matches_simulated_recomputation(
            c in arb_counts(),
            picks in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let group: BTreeSet<Id> = c.keys().zip(&picks).filter(|(_, p)| **p).map(|(f, _)| f.clone()).collect();
            let counts_vec: Vec<(String, u64)> = c.iter().map(|(f, n)| (f.to_string(), *n)).collect();
            let group_vec: Vec<String> = group.iter().map(Id::to_string).collect();
            let want = simulated_hhi_change(&counts_vec, &group_vec);
            let got = simulated_increment(&c, std::slice::from_ref(&group));
            prop_assert!(close(got, want, 1e-9), "{got} vs {want}");
            prop_assert!(got >= 0.0);
            prop_assert_eq!(got == 0.0, group.len() < 2);
        }

        #[test]
        fn hhi_matches_full_scan_and_is_order_free(ns in proptest::collection::vec(1u64..50, 1..8)) {
            let mut jobs = Vec::new();
            let mut w = 0;
            for (i, n) in ns.iter().enumerate() {
                for k in 0..*n {
                    let mut j = job(&format!("F{i}"), 2008, w);
                    // Split each firm's head count across two establishments.
                    j.establishment_id = format!("F{i}{}", k % 2).into();
                    jobs.push(j);
                    w += 1;
                }
            }
            let counts = firm_employment(&jobs);
            let got = hhi_of_counts(&counts[&(MarketKey::new("Z", "100"), 2008)]).unwrap();
            let scan: Vec<OracleJob> = jobs.iter().rev().map(|j| OracleJob {
                firm: j.firm_id.to_string(),
                market: "Z/100".into(),
                year: j.year,
            }).collect();
            let want = hhi_by_scan(&scan, "Z/100", 2008).unwrap();
            prop_assert!(close(got, want, 1e-9));
            prop_assert!(got > 0.0 && got <= 10_000.0 + 1e-9);
        }
    }
}
