//! The pipeline stages. Each reads the previous stages' files from the output
//! root, so any stage can be rerun on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use llmerge_core::did::{
    cohort_status_table, compute_cells, event_study, overall_effect, percent_change, write_att_gt,
    write_cohort_status, write_control_sets, Cell, OutcomePanel,
};
use llmerge_core::events::{identify_events, read_events, read_registry, write_events, MergerEvent};
use llmerge_core::inference::{bootstrap_curve, bootstrap_scalar, write_event_study, write_overall};
use llmerge_core::ingest::{ingest_files, read_cz_map, read_deflators, read_tradable, IngestConfig};
use llmerge_core::io::{csv_reader, csv_writer, fmt_f64, read_jobs, write_jobs, Header};
use llmerge_core::markets::{
    assign_cohorts, build_market_panel, classify_events, classify_markets, event_delta, firm_employment,
    hhi_table, merging_roster, predicted_delta_hhi, read_cohorts, read_panel, write_cohorts,
    write_event_classes, write_hhi, write_panel, write_percentiles, EventClass, MarketAssignment, PanelSpec,
};
use llmerge_core::model::{JobRecord, MarketKey, Outcome};
use llmerge_core::synth::{generate_panel, write_bundle};
use llmerge_core::wage::{fit_years, read_theta, write_beta, write_theta};
use llmerge_core::{Error, Id, Result, Split, Subpop};
use log::{info, warn};
use serde::Serialize;

use crate::config::{EventType, RunConfig};
use crate::report;
use crate::stage::Stage;

pub const STAGES: [&str; 6] = ["ingest", "events", "markets", "adjust", "estimate", "report"];

fn stage_dir(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.output.join(name)
}

/// Path of a file produced by an earlier stage, failing if it is absent.
pub fn upstream(cfg: &RunConfig, stage: &str, file: &str) -> Result<PathBuf> {
    let p = stage_dir(cfg, stage).join(file);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Config(format!(
            "missing {}: run the `{stage}` stage first",
            p.display()
        )))
    }
}

fn data_file(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let p = cfg.paths.data_root.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Config(format!(
            "input file {} does not exist",
            p.display()
        )))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn jobs_file(year: i32) -> String {
    format!("jobs_{year}.csv")
}

pub fn separations_file(year: i32) -> String {
    format!("separations_{year}.csv")
}

pub fn panel_file(split: Split, subpop: Subpop) -> String {
    format!("panel_{split}_{subpop}.csv")
}

pub fn spec_tag(outcome: Outcome, split: Split, subpop: Subpop) -> String {
    format!("{outcome}-{split}-{subpop}")
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let data = generate_panel(&cfg.simulate)?;
    let stage = Stage::begin("simulate", cfg.paths.data_root.clone(), true)?;
    write_bundle(&stage.staging_dir(), &data)?;
    stage.commit(cfg)?;
    info!(
        "simulated {} markets, {} merger events into {}",
        data.truth.cohorts.len(),
        data.truth.events.len(),
        cfg.paths.data_root.display()
    );
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let window = cfg.window()?;
    let mut stage = Stage::begin("ingest", stage_dir(cfg, "ingest"), false)?;
    let mut files = Vec::new();
    for y in window.years() {
        let p = cfg.raw_file(y);
        if !p.is_file() {
            return Err(Error::Config(format!("raw file {} does not exist", p.display())));
        }
        stage.input(format!("data/{}", p.file_name().unwrap().to_string_lossy()), &p)?;
        files.push((y, p));
    }
    let cz = data_file(cfg, &cfg.ingest.cz_map)?;
    let defl = data_file(cfg, &cfg.ingest.deflators)?;
    stage.input(format!("data/{}", cfg.ingest.cz_map), &cz)?;
    stage.input(format!("data/{}", cfg.ingest.deflators), &defl)?;
    let tradable = match &cfg.ingest.tradable {
        Some(name) => {
            let p = data_file(cfg, name)?;
            stage.input(format!("data/{name}"), &p)?;
            Some(read_tradable(&p)?)
        }
        None => None,
    };
    let icfg = IngestConfig {
        delimiter: cfg.ingest.delimiter as u8,
        encoding: cfg.ingest.encoding,
        window,
        cz_map: read_cz_map(&cz)?,
        deflators: read_deflators(&defl)?,
        tradable,
    };
    let out = ingest_files(&files, &icfg)?;
    for y in &out.years {
        write_jobs(&stage.path(&jobs_file(y.year)), &y.jobs)?;
        write_jobs(&stage.path(&separations_file(y.year)), &y.separations)?;
    }
    write_json(&stage.path("ingest_report.json"), &out.report)?;
    stage.commit(cfg)?;
    Ok(())
}

fn read_stage_jobs(cfg: &RunConfig, stage: &mut Stage, prefix: fn(i32) -> String) -> Result<Vec<JobRecord>> {
    let mut all = Vec::new();
    for y in cfg.window()?.years() {
        let name = prefix(y);
        let p = upstream(cfg, "ingest", &name)?;
        stage.input(format!("ingest/{name}"), &p)?;
        all.extend(read_jobs(&p)?);
    }
    Ok(all)
}

#[derive(Serialize)]
struct EventsReport {
    n_targets_flagged: usize,
    n_events: usize,
    n_without_counterpart: usize,
    n_ties: usize,
    discarded_targets: Vec<Id>,
}

pub fn events(cfg: &RunConfig) -> Result<()> {
    let mut stage = Stage::begin("events", stage_dir(cfg, "events"), false)?;
    let reg_path = data_file(cfg, &cfg.ingest.registry)?;
    stage.input(format!("data/{}", cfg.ingest.registry), &reg_path)?;
    let registry = read_registry(&reg_path, cfg.ingest.registry_delimiter as u8)?;
    let jobs = read_stage_jobs(cfg, &mut stage, jobs_file)?;
    let found = identify_events(&registry, &jobs);
    write_events(&stage.path("events.csv"), &found.events)?;
    let report = EventsReport {
        n_targets_flagged: found
            .events
            .iter()
            .map(|e| e.target_establishments.len())
            .sum::<usize>()
            + found.discarded.len(),
        n_events: found.events.len(),
        n_without_counterpart: found
            .events
            .iter()
            .filter(|e| e.counterpart_firm.is_none())
            .count(),
        n_ties: found.events.iter().filter(|e| e.tie).count(),
        discarded_targets: found.discarded,
    };
    write_json(&stage.path("events_report.json"), &report)?;
    stage.commit(cfg)?;
    Ok(())
}

fn read_stage_events(cfg: &RunConfig, stage: &mut Stage) -> Result<Vec<MergerEvent>> {
    let p = upstream(cfg, "events", "events.csv")?;
    stage.input("events/events.csv", &p)?;
    read_events(&p)
}

fn tradable_filter(cfg: &RunConfig, jobs: Vec<JobRecord>) -> Vec<JobRecord> {
    if cfg.markets.tradable_only {
        jobs.into_iter().filter(|r| r.tradable).collect()
    } else {
        jobs
    }
}

pub fn markets(cfg: &RunConfig) -> Result<()> {
    let window = cfg.window()?;
    let mut stage = Stage::begin("markets", stage_dir(cfg, "markets"), false)?;
    let jobs = tradable_filter(cfg, read_stage_jobs(cfg, &mut stage, jobs_file)?);
    let separations = read_stage_jobs(cfg, &mut stage, separations_file)?;
    let events = read_stage_events(cfg, &mut stage)?;

    let counts = firm_employment(&jobs);
    write_hhi(&stage.path("hhi.csv"), &hhi_table(&counts))?;

    let deltas: Vec<Option<f64>> = events
        .iter()
        .map(|e| predicted_delta_hhi(e, &counts).map(|d| event_delta(&d)))
        .collect();
    let classification = classify_events(&deltas, cfg.markets.high_impact_percentile);
    write_event_classes(
        &stage.path("event_classes.csv"),
        &events,
        &deltas,
        &classification.classes,
    )?;
    write_percentiles(&stage.path("delta_hhi_percentiles.csv"), &classification)?;

    let universe: BTreeSet<MarketKey> = jobs.iter().map(JobRecord::market).collect();
    let cohorts = assign_cohorts(&events, &universe);
    cohorts.validate(&window)?;
    let classes = classify_markets(&events, &cohorts, &counts, classification.threshold);
    let assignments: Vec<MarketAssignment> = cohorts
        .iter()
        .map(|(m, g)| MarketAssignment {
            market: m.clone(),
            cohort: g,
            class: classes.get(m).copied().flatten(),
        })
        .collect();
    write_cohorts(&stage.path("cohorts.csv"), &assignments)?;
    let status = cohort_status_table(cohorts.iter().map(|(_, g)| g).collect::<Vec<_>>(), window.years());
    write_cohort_status(&stage.path("cohort_status.csv"), &status)?;

    let roster = merging_roster(&events);
    for &split in &cfg.estimate.splits {
        for &subpop in &cfg.estimate.subpops {
            let spec = PanelSpec {
                window,
                split,
                subpop,
                tradable_only: cfg.markets.tradable_only,
            };
            let panel = build_market_panel(&jobs, &separations, &cohorts, &roster, &spec);
            write_panel(&stage.path(&panel_file(split, subpop)), &panel.rows)?;
        }
    }
    stage.commit(cfg)?;
    Ok(())
}

pub fn adjust(cfg: &RunConfig) -> Result<()> {
    let mut stage = Stage::begin("adjust", stage_dir(cfg, "adjust"), false)?;
    let jobs = tradable_filter(cfg, read_stage_jobs(cfg, &mut stage, jobs_file)?);
    let events = read_stage_events(cfg, &mut stage)?;
    let roster = merging_roster(&events);
    let empty = BTreeSet::new();
    let mut fits = Vec::new();
    for &split in &cfg.estimate.splits {
        for &subpop in &cfg.estimate.subpops {
            let subset: Vec<&JobRecord> = jobs
                .iter()
                .filter(|r| subpop.admits(r.tenure_months, r.admission_type))
                .filter(|r| {
                    let merging = roster.get(&r.market()).unwrap_or(&empty).contains(&r.firm_id);
                    match split {
                        Split::All => true,
                        Split::Merging => merging,
                        Split::Spillover => !merging,
                    }
                })
                .collect();
            if subset.is_empty() {
                warn!("no workers in {split}/{subpop}; skipping wage adjustment");
                continue;
            }
            fits.push((split, subpop, fit_years(&subset)?));
        }
    }
    write_theta(&stage.path("theta.csv"), &fits)?;
    write_beta(&stage.path("beta.csv"), &fits)?;
    stage.commit(cfg)?;
    Ok(())
}

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "outcome",
    "split",
    "subpop",
    "status",
    "n_markets",
    "n_treated_markets",
    "n_cells",
    "n_identified_cells",
    "estimate",
    "se",
    "ci_lo",
    "ci_hi",
    "percent",
    "sup_t_critical",
    "incomplete",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub outcome: Outcome,
    pub split: Split,
    pub subpop: Subpop,
    pub status: String,
    pub n_markets: usize,
    pub n_treated: usize,
    pub n_cells: usize,
    pub n_identified: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub sup_t: Option<f64>,
    pub incomplete: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.outcome.to_string(),
            r.split.to_string(),
            r.subpop.to_string(),
            r.status.clone(),
            r.n_markets.to_string(),
            r.n_treated.to_string(),
            r.n_cells.to_string(),
            r.n_identified.to_string(),
            opt(r.estimate),
            opt(r.se),
            opt(r.ci.map(|c| c.0)),
            opt(r.ci.map(|c| c.1)),
            opt(r.estimate.filter(|_| r.outcome.is_log()).map(percent_change)),
            opt(r.sup_t),
            u8::from(r.incomplete).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    h.expect_exact(&SUMMARY_COLUMNS)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let lo: Option<f64> = h.parse_opt(&rec, 10)?;
        let hi: Option<f64> = h.parse_opt(&rec, 11)?;
        out.push(SummaryRow {
            outcome: h.parse(&rec, 0)?,
            split: h.parse(&rec, 1)?,
            subpop: h.parse(&rec, 2)?,
            status: h.field(&rec, 3).to_owned(),
            n_markets: h.parse(&rec, 4)?,
            n_treated: h.parse(&rec, 5)?,
            n_cells: h.parse(&rec, 6)?,
            n_identified: h.parse(&rec, 7)?,
            estimate: h.parse_opt(&rec, 8)?,
            se: h.parse_opt(&rec, 9)?,
            ci: lo.zip(hi),
            sup_t: h.parse_opt(&rec, 13)?,
            incomplete: h.parse_bool(&rec, 14)?,
        });
    }
    Ok(out)
}

fn keep_market(filter: EventType, cohort: Option<i32>, class: Option<EventClass>) -> bool {
    match (filter, cohort) {
        (EventType::All, _) | (_, None) => true,
        (EventType::OutOfMarket, Some(_)) => class == Some(EventClass::OutOfMarket),
        (EventType::HighImpact, Some(_)) => class == Some(EventClass::HighImpact),
    }
}

pub fn estimate(cfg: &RunConfig) -> Result<()> {
    let mut stage = Stage::begin("estimate", stage_dir(cfg, "estimate"), false)?;
    let cohort_path = upstream(cfg, "markets", "cohorts.csv")?;
    stage.input("markets/cohorts.csv", &cohort_path)?;
    let classes: BTreeMap<MarketKey, Option<EventClass>> = read_cohorts(&cohort_path)?
        .into_iter()
        .map(|a| (a.market, a.class))
        .collect();
    let theta = if cfg.estimate.outcomes.contains(&Outcome::Theta) {
        let p = upstream(cfg, "adjust", "theta.csv")?;
        stage.input("adjust/theta.csv", &p)?;
        read_theta(&p)?
    } else {
        BTreeMap::new()
    };
    let run = cfg.bootstrap_run();
    let mut summary = Vec::new();
    for &split in &cfg.estimate.splits {
        for &subpop in &cfg.estimate.subpops {
            let name = panel_file(split, subpop);
            let p = upstream(cfg, "markets", &name)?;
            stage.input(format!("markets/{name}"), &p)?;
            let mut rows = read_panel(&p)?;
            for &outcome in &cfg.estimate.outcomes {
                if outcome == Outcome::Theta {
                    for r in &mut rows {
                        r.theta = theta.get(&(split, subpop, r.market.clone(), r.year)).copied();
                    }
                }
                let mut panel = OutcomePanel::from_rows(&rows, outcome)?;
                let filter = cfg.estimate.event_type;
                panel.retain_markets(|m, g| keep_market(filter, g, classes.get(m).copied().flatten()));
                let tag = spec_tag(outcome, split, subpop);
                let ecfg = cfg.estimator(outcome);
                let cells = compute_cells(&panel, &ecfg)?;
                let mut row = SummaryRow {
                    outcome,
                    split,
                    subpop,
                    status: "ok".into(),
                    n_markets: panel.n_markets(),
                    n_treated: panel.cohort.iter().flatten().count(),
                    n_cells: cells.len(),
                    n_identified: cells.iter().filter(|c| matches!(c, Cell::Identified(_))).count(),
                    estimate: None,
                    se: None,
                    ci: None,
                    sup_t: None,
                    incomplete: false,
                };
                write_att_gt(&stage.path(&format!("att_gt_{tag}.csv")), &cells)?;
                write_control_sets(&stage.path(&format!("control_sets_{tag}.csv")), &panel, &cells)?;
                let es = event_study(&panel, &cells, &ecfg);
                match overall_effect(&panel, &cells, &es, &ecfg) {
                    Ok(mut o) => {
                        let curve = bootstrap_curve(&es, &run)?;
                        bootstrap_scalar(&mut o, &run, cfg.bootstrap.interval)?;
                        write_event_study(&stage.path(&format!("event_study_{tag}.csv")), &curve)?;
                        write_overall(&stage.path(&format!("overall_{tag}.csv")), &o, outcome.is_log())?;
                        row.estimate = Some(o.estimate);
                        row.se = o.se;
                        row.ci = o.ci;
                        row.sup_t = Some(curve.sup_t_critical);
                        row.incomplete = o.incomplete;
                    }
                    Err(Error::Identification(msg)) => {
                        warn!("{tag}: {msg}");
                        row.status = "unidentified".into();
                    }
                    Err(e) => return Err(e),
                }
                summary.push(row);
            }
        }
    }
    write_summary(&stage.path("summary.csv"), &summary)?;
    if summary.iter().all(|r| r.status != "ok") {
        return Err(Error::Identification(
            "no requested specification has an identified post-treatment effect".into(),
        ));
    }
    stage.commit(cfg)?;
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let mut stage = Stage::begin("report", stage_dir(cfg, "report"), false)?;
    let sp = upstream(cfg, "estimate", "summary.csv")?;
    stage.input("estimate/summary.csv", &sp)?;
    let summary = read_summary(&sp)?;
    let mut curves = Vec::new();
    for r in summary.iter().filter(|r| r.status == "ok") {
        let tag = spec_tag(r.outcome, r.split, r.subpop);
        let name = format!("event_study_{tag}.csv");
        let p = upstream(cfg, "estimate", &name)?;
        stage.input(format!("estimate/{name}"), &p)?;
        let curve = report::read_event_study(&p)?;
        let title = format!("{}, {} employers, {} workers", r.outcome, r.split, r.subpop);
        fs::write(
            stage.path(&format!("event_study_{tag}.svg")),
            report::event_study_svg(&title, &curve),
        )
        .map_err(|e| Error::io(stage.path(&name), e))?;
        curves.push((r.clone(), curve));
    }
    let overall_svg = report::overall_svg(&summary);
    fs::write(stage.path("overall.svg"), overall_svg).map_err(|e| Error::io(stage.path("overall.svg"), e))?;
    let md = report::markdown(cfg, &summary);
    fs::write(stage.path("report.md"), md).map_err(|e| Error::io(stage.path("report.md"), e))?;
    stage.commit(cfg)?;
    Ok(())
}
