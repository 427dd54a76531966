//! Merger and acquisition events.
//!
//! The registry only flags the acquired or merged establishments. The other
//! side of the deal is recovered from worker flows: the firm that admits the
//! most workers of the target in the year after it was last observed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, fmt_opt_f64, Header};
use crate::model::{Id, JobRecord, MarketKey};

/// Registry termination reasons: acquired (2) or merged (3).
pub const MERGER_REASON_CODES: [u8; 2] = [2, 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryRow {
    pub establishment_id: Id,
    pub termination_reason: Option<u8>,
    pub termination_date: Option<String>,
}

pub fn read_registry(path: &Path, delimiter: u8) -> Result<Vec<RegistryRow>> {
    let mut rdr = csv_reader(path, delimiter)?;
    let h = Header::read(path, &mut rdr)?;
    let (e, r) = (h.col("establishment_id")?, h.col("termination_reason")?);
    let d = h.col("termination_date").ok();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(RegistryRow {
            establishment_id: Id::new(h.field(&rec, e)),
            termination_reason: h.parse_opt(&rec, r)?,
            termination_date: d.map(|d| h.field(&rec, d).to_owned()).filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

/// Establishments retired because they were acquired or merged.
pub fn flag_targets(registry: &[RegistryRow]) -> BTreeSet<Id> {
    registry
        .iter()
        .filter(|r| matches!(r.termination_reason, Some(c) if MERGER_REASON_CODES.contains(&c)))
        .map(|r| r.establishment_id.clone())
        .collect()
}

/// Read-only lookups over Dec-31 job records.
pub struct PanelIndex<'a> {
    records: &'a [JobRecord],
    worker_year: HashMap<(&'a str, i32), usize>,
    establishment_years: HashMap<&'a str, BTreeMap<i32, Vec<usize>>>,
    firm_markets: HashMap<(&'a str, i32), BTreeSet<(&'a str, &'a str)>>,
}

impl<'a> PanelIndex<'a> {
    /// `records` must hold at most one active job per worker-year (the ingest
    /// invariant); inactive records are ignored.
    pub fn new(records: &'a [JobRecord]) -> Self {
        let mut worker_year = HashMap::with_capacity(records.len());
        let mut establishment_years: HashMap<&str, BTreeMap<i32, Vec<usize>>> = HashMap::new();
        let mut firm_markets: HashMap<(&str, i32), BTreeSet<(&str, &str)>> = HashMap::new();
        for (i, r) in records.iter().enumerate().filter(|(_, r)| r.active_dec31) {
            worker_year.insert((r.worker_id.as_str(), r.year), i);
            establishment_years
                .entry(r.establishment_id.as_str())
                .or_default()
                .entry(r.year)
                .or_default()
                .push(i);
            firm_markets
                .entry((r.firm_id.as_str(), r.year))
                .or_default()
                .insert((r.commuting_zone.as_str(), r.industry_code.as_str()));
        }
        PanelIndex {
            records,
            worker_year,
            establishment_years,
            firm_markets,
        }
    }

    pub fn job(&self, worker: &str, year: i32) -> Option<&'a JobRecord> {
        self.worker_year.get(&(worker, year)).map(|&i| &self.records[i])
    }

    pub fn workforce(&self, establishment: &str, year: i32) -> impl Iterator<Item = &'a JobRecord> + '_ {
        self.establishment_years
            .get(establishment)
            .and_then(|ys| ys.get(&year))
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn establishment_years(&self, establishment: &str) -> Option<&BTreeMap<i32, Vec<usize>>> {
        self.establishment_years.get(establishment)
    }

    pub fn firm_in_market(&self, firm: &str, market: &MarketKey, year: i32) -> bool {
        self.firm_markets
            .get(&(firm, year))
            .is_some_and(|ms| ms.contains(&(market.commuting_zone.as_str(), market.industry_code.as_str())))
    }
}

/// Last year with at least one Dec-31 job at the establishment.
pub fn last_observed_year(target: &str, panel: &PanelIndex<'_>) -> Option<i32> {
    panel
        .establishment_years(target)
        .and_then(|ys| ys.keys().next_back().copied())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterpart {
    pub firm: Option<Id>,
    /// More than one destination shared the top count.
    pub tie: bool,
    /// Workers at the target in its last year.
    pub n_workers: usize,
    /// Of those, workers holding a job at a different firm the next year.
    pub n_reemployed: usize,
    pub n_to_counterpart: usize,
}

/// Modal destination firm of the target's last-year workforce in the
/// following year. Ties go to the smallest firm id.
pub fn identify_counterpart(target: &str, last_year: i32, panel: &PanelIndex<'_>) -> Counterpart {
    let mut n_workers = 0;
    let mut destinations: BTreeMap<&str, usize> = BTreeMap::new();
    for job in panel.workforce(target, last_year) {
        n_workers += 1;
        if let Some(next) = panel.job(job.worker_id.as_str(), last_year + 1) {
            if next.firm_id != job.firm_id {
                *destinations.entry(next.firm_id.as_str()).or_default() += 1;
            }
        }
    }
    let n_reemployed = destinations.values().sum();
    let top = destinations.values().copied().max().unwrap_or(0);
    // BTreeMap iterates in id order, so the first maximal entry is the smallest id.
    let mut winners = destinations.iter().filter(|(_, &n)| n == top);
    let firm = winners.next().map(|(f, _)| Id::new(*f));
    let tie = winners.next().is_some();
    if tie {
        warn!(
            "counterpart tie for establishment {target} in {last_year}: {} workers to each of several firms, picking {}",
            top,
            firm.as_ref().map_or("-", Id::as_str)
        );
    }
    Counterpart {
        firm,
        tie,
        n_workers,
        n_reemployed,
        n_to_counterpart: top,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergerEvent {
    pub target_establishments: BTreeSet<Id>,
    pub target_firm: Id,
    pub counterpart_firm: Option<Id>,
    /// Last year the target appears in the worker data.
    pub event_year: i32,
    pub markets: BTreeSet<MarketKey>,
    /// Undefined when the counterpart is unknown.
    pub within_market: Option<bool>,
    pub n_workers: usize,
    pub n_reemployed: usize,
    pub n_to_counterpart: usize,
    pub tie: bool,
}

impl MergerEvent {
    /// Share of the target's last-year workforce found at the counterpart the
    /// following year.
    pub fn coalition_share(&self) -> Option<f64> {
        (self.counterpart_firm.is_some() && self.n_workers > 0)
            .then(|| self.n_to_counterpart as f64 / self.n_workers as f64)
    }

    /// Merging parties: the target firm plus the counterpart when known.
    pub fn parties(&self) -> Vec<&Id> {
        std::iter::once(&self.target_firm)
            .chain(self.counterpart_firm.as_ref())
            .collect()
    }
}

/// Fills `markets` with those where the target employs in the event year and
/// decides whether the counterpart was active in any of them that year.
pub fn assign_event_markets(mut event: MergerEvent, panel: &PanelIndex<'_>) -> MergerEvent {
    event.markets = event
        .target_establishments
        .iter()
        .flat_map(|e| panel.workforce(e.as_str(), event.event_year))
        .map(JobRecord::market)
        .collect();
    event.within_market = event.counterpart_firm.as_ref().map(|c| {
        event
            .markets
            .iter()
            .any(|m| panel.firm_in_market(c.as_str(), m, event.event_year))
    });
    event
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventsOutput {
    pub events: Vec<MergerEvent>,
    /// Flagged establishments never observed in the worker data.
    pub discarded: Vec<Id>,
}

/// Identifies every event. Targets of one firm absorbed by the same
/// counterpart in the same year are merged into a single event.
pub fn identify_events(registry: &[RegistryRow], records: &[JobRecord]) -> EventsOutput {
    let panel = PanelIndex::new(records);
    let targets: Vec<Id> = flag_targets(registry).into_iter().collect();
    type Hit = (i32, Counterpart, Id);
    let found: Vec<(Id, Option<Hit>)> = targets
        .par_iter()
        .map(|t| {
            let hit = last_observed_year(t.as_str(), &panel).map(|year| {
                let cp = identify_counterpart(t.as_str(), year, &panel);
                let firm = panel
                    .workforce(t.as_str(), year)
                    .next()
                    .map(|j| j.firm_id.clone())
                    .expect("last observed year has a workforce");
                (year, cp, firm)
            });
            (t.clone(), hit)
        })
        .collect();

    let mut discarded = Vec::new();
    let mut grouped: BTreeMap<(i32, Id, Option<Id>), MergerEvent> = BTreeMap::new();
    for (est, hit) in found {
        let Some((year, cp, firm)) = hit else {
            info!("discarding target {est}: never observed in worker data");
            discarded.push(est);
            continue;
        };
        let ev = grouped
            .entry((year, firm.clone(), cp.firm.clone()))
            .or_insert_with(|| MergerEvent {
                target_establishments: BTreeSet::new(),
                target_firm: firm,
                counterpart_firm: cp.firm.clone(),
                event_year: year,
                markets: BTreeSet::new(),
                within_market: None,
                n_workers: 0,
                n_reemployed: 0,
                n_to_counterpart: 0,
                tie: false,
            });
        ev.target_establishments.insert(est);
        ev.n_workers += cp.n_workers;
        ev.n_reemployed += cp.n_reemployed;
        ev.n_to_counterpart += cp.n_to_counterpart;
        ev.tie |= cp.tie;
    }
    let events = grouped
        .into_values()
        .map(|e| assign_event_markets(e, &panel))
        .collect();
    EventsOutput { events, discarded }
}

pub const EVENT_COLUMNS: [&str; 12] = [
    "event_id",
    "target_firm",
    "target_establishments",
    "counterpart_firm",
    "event_year",
    "markets",
    "within_market",
    "n_workers",
    "n_reemployed",
    "n_to_counterpart",
    "coalition_share",
    "tie",
];

const LIST_SEP: char = '|';
const MARKET_SEP: char = ':';

pub fn format_market(m: &MarketKey) -> String {
    format!("{}{MARKET_SEP}{}", m.commuting_zone, m.industry_code)
}

pub fn parse_market(s: &str) -> Option<MarketKey> {
    let (cz, ind) = s.split_once(MARKET_SEP)?;
    Some(MarketKey::new(cz, ind))
}

fn join<T>(items: impl IntoIterator<Item = T>, f: impl Fn(T) -> String) -> String {
    items
        .into_iter()
        .map(f)
        .collect::<Vec<_>>()
        .join(&LIST_SEP.to_string())
}

pub fn write_events(path: &Path, events: &[MergerEvent]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EVENT_COLUMNS)?;
    for (i, e) in events.iter().enumerate() {
        w.write_record([
            i.to_string(),
            e.target_firm.to_string(),
            join(&e.target_establishments, |x| x.to_string()),
            e.counterpart_firm.as_ref().map(Id::to_string).unwrap_or_default(),
            e.event_year.to_string(),
            join(&e.markets, format_market),
            e.within_market
                .map(|b| u8::from(b).to_string())
                .unwrap_or_default(),
            e.n_workers.to_string(),
            e.n_reemployed.to_string(),
            e.n_to_counterpart.to_string(),
            fmt_opt_f64(e.coalition_share()),
            u8::from(e.tie).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<MergerEvent>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    h.expect_exact(&EVENT_COLUMNS)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let list = |i: usize| -> Vec<String> {
            let s = h.field(&rec, i);
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(LIST_SEP).map(str::to_owned).collect()
            }
        };
        let markets = list(5)
            .iter()
            .map(|m| {
                parse_market(m)
                    .ok_or_else(|| Error::schema(path.display().to_string(), format!("bad market `{m}`")))
            })
            .collect::<Result<_>>()?;
        let within: Option<u8> = h.parse_opt(&rec, 6)?;
        let cp = h.field(&rec, 3);
        out.push(MergerEvent {
            target_firm: Id::new(h.field(&rec, 1)),
            target_establishments: list(2).into_iter().map(Id::from).collect(),
            counterpart_firm: (!cp.is_empty()).then(|| Id::new(cp)),
            event_year: h.parse(&rec, 4)?,
            markets,
            within_market: within.map(|b| b == 1),
            n_workers: h.parse(&rec, 7)?,
            n_reemployed: h.parse(&rec, 8)?,
            n_to_counterpart: h.parse(&rec, 9)?,
            tie: h.parse_bool(&rec, 11)?,
        });
    }
    Ok(out)
}
