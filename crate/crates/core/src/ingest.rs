//! Raw worker-year files to canonical job records.
//!
//! Per year: attach commuting zones, keep contracts active on December 31st,
//! keep each worker's highest paying job. Across years: a worker ever reported
//! non-white is non-white in every year. Inactive rows whose separation is not
//! a transfer are kept aside as separation records.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use csv::StringRecord;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_reader, Header};
use crate::model::{validate_record, FlowFlags, Id, JobRecord, YearWindow};

/// Columns of the raw per-year worker file.
pub const RAW_COLUMNS: [&str; 15] = [
    "worker_id",
    "establishment_id",
    "city_code",
    "industry_code",
    "dec31_status",
    "monthly_earnings",
    "contract_hours",
    "admission_date",
    "admission_type",
    "separation_code",
    "tenure_months",
    "race_code",
    "sex",
    "age",
    "education_code",
];

pub const FIRM_ROOT_LEN: usize = 8;
pub const INDUSTRY_DIGITS: usize = 3;
pub const WHITE_RACE_CODE: u8 = 2;
pub const FEMALE_SEX_CODE: u8 = 2;
pub const COLLEGE_MIN_EDUCATION: u8 = 9;
pub const HIGHSCHOOL_EDUCATION: [u8; 2] = [7, 8];

/// One row as delivered. Fields that fail to parse are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWorkerRow {
    pub worker_id: Option<Id>,
    pub establishment_id: Option<Id>,
    pub city_code: Option<Id>,
    pub industry_code: Option<Id>,
    pub dec31_status: Option<u8>,
    pub monthly_earnings: Option<f64>,
    pub contract_hours: Option<f64>,
    pub admission_date: Option<String>,
    pub admission_type: Option<u8>,
    pub separation_code: Option<u8>,
    pub tenure_months: Option<f64>,
    pub race_code: Option<u8>,
    pub sex: Option<u8>,
    pub age: Option<u8>,
    pub education_code: Option<u8>,
}

impl RawWorkerRow {
    pub fn is_active(&self) -> bool {
        matches!(self.dec31_status, Some(s) if s != 0)
    }

    pub fn is_nonwhite(&self) -> bool {
        matches!(self.race_code, Some(c) if c != WHITE_RACE_CODE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Utf8,
    Latin1,
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub delimiter: u8,
    pub encoding: Encoding,
    pub window: YearWindow,
    pub cz_map: BTreeMap<Id, Id>,
    /// Year → factor converting nominal BRL into base-year BRL.
    pub deflators: BTreeMap<i32, f64>,
    /// 3-digit tradable industries; `None` treats every industry as tradable.
    pub tradable: Option<BTreeSet<Id>>,
}

/// Row counts by cleaning rule for one year.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearReport {
    pub year: i32,
    pub rows_in: u64,
    pub dropped_missing_fields: u64,
    pub dropped_unmapped_city: u64,
    pub dropped_inactive: u64,
    pub dropped_lower_paying: u64,
    pub dropped_invalid: u64,
    pub rows_out: u64,
    pub separations_out: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub years: Vec<YearReport>,
    pub workers_harmonized_nonwhite: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearOutput {
    pub year: i32,
    pub jobs: Vec<JobRecord>,
    pub separations: Vec<JobRecord>,
    pub report: YearReport,
    nonwhite: BTreeSet<Id>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub years: Vec<YearOutput>,
    pub report: IngestReport,
}

/// Keeps only contracts active on December 31st.
pub fn filter_active(rows: Vec<RawWorkerRow>) -> Vec<RawWorkerRow> {
    rows.into_iter().filter(RawWorkerRow::is_active).collect()
}

/// One row per worker: the highest monthly earnings, ties to the smallest
/// establishment id. Output is ordered by worker id.
///
/// Rows without worker id or earnings are discarded.
pub fn dedup_highest_paying(rows: Vec<RawWorkerRow>) -> Vec<RawWorkerRow> {
    let mut best: BTreeMap<Id, RawWorkerRow> = BTreeMap::new();
    for row in rows {
        let (Some(w), Some(pay)) = (row.worker_id.clone(), row.monthly_earnings) else {
            continue;
        };
        match best.get(&w) {
            Some(cur) => {
                let cur_pay = cur.monthly_earnings.unwrap_or(f64::NEG_INFINITY);
                let better = pay > cur_pay || (pay == cur_pay && row.establishment_id < cur.establishment_id);
                if better {
                    best.insert(w, row);
                }
            }
            None => {
                best.insert(w, row);
            }
        }
    }
    best.into_values().collect()
}

/// Sets `white = false` in every year if any year of the worker's history
/// reports a non-white code.
pub fn harmonize_race(history: &mut [JobRecord]) {
    if history.iter().any(|r| !r.white) {
        for r in history.iter_mut() {
            r.white = false;
        }
    }
}

pub fn flag_flows(r: &JobRecord) -> FlowFlags {
    r.flows()
}

/// Splits rows into those whose city maps to a commuting zone and a count of
/// the rest, which are dropped.
pub fn attach_geography(
    rows: Vec<RawWorkerRow>,
    cz_map: &BTreeMap<Id, Id>,
) -> Result<(Vec<(Id, RawWorkerRow)>, u64)> {
    if cz_map.is_empty() {
        return Err(Error::Config("empty city → commuting zone map".into()));
    }
    let mut dropped = 0;
    let mut kept = Vec::with_capacity(rows.len());
    for row in rows {
        match row.city_code.as_ref().and_then(|c| cz_map.get(c)) {
            Some(cz) => kept.push((cz.clone(), row)),
            None => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

fn decode(bytes: Vec<u8>, enc: Encoding, path: &Path) -> Result<String> {
    match enc {
        Encoding::Utf8 => String::from_utf8(bytes)
            .map_err(|e| Error::schema(path.display().to_string(), format!("invalid utf-8: {e}"))),
        Encoding::Latin1 => Ok(bytes.into_iter().map(char::from).collect()),
    }
}

fn opt<T: std::str::FromStr>(rec: &StringRecord, idx: Option<usize>) -> Option<T> {
    let s = rec.get(idx?)?.trim();
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}

fn opt_id(rec: &StringRecord, idx: Option<usize>) -> Option<Id> {
    let s = rec.get(idx?)?.trim();
    (!s.is_empty()).then(|| Id::new(s))
}

/// Parses one raw file. A missing Dec-31 status column is a schema error; the
/// other columns may be absent, in which case their values are treated as
/// missing and the affected rows are dropped later.
pub fn read_raw(path: &Path, delimiter: u8, encoding: Encoding) -> Result<Vec<RawWorkerRow>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = decode(bytes, encoding, path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(text.as_bytes());
    let h = Header::new(path.display().to_string(), rdr.headers()?);
    h.col("dec31_status")?;
    let ix = |name: &str| h.col(name).ok();
    let cols: Vec<Option<usize>> = RAW_COLUMNS.iter().map(|c| ix(c)).collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(RawWorkerRow {
            worker_id: opt_id(&rec, cols[0]),
            establishment_id: opt_id(&rec, cols[1]),
            city_code: opt_id(&rec, cols[2]),
            industry_code: opt_id(&rec, cols[3]),
            dec31_status: opt(&rec, cols[4]),
            monthly_earnings: opt(&rec, cols[5]),
            contract_hours: opt(&rec, cols[6]),
            admission_date: opt(&rec, cols[7]),
            admission_type: opt(&rec, cols[8]),
            separation_code: opt(&rec, cols[9]),
            tenure_months: opt(&rec, cols[10]),
            race_code: opt(&rec, cols[11]),
            sex: opt(&rec, cols[12]),
            age: opt(&rec, cols[13]),
            education_code: opt(&rec, cols[14]),
        });
    }
    Ok(out)
}

fn has_required_fields(r: &RawWorkerRow) -> bool {
    r.worker_id.is_some()
        && r.establishment_id
            .as_ref()
            .is_some_and(|e| e.as_str().len() >= FIRM_ROOT_LEN)
        && r.city_code.is_some()
        && r.industry_code
            .as_ref()
            .is_some_and(|i| i.as_str().len() >= INDUSTRY_DIGITS)
        && r.dec31_status.is_some()
        && r.monthly_earnings.is_some_and(|m| m > 0.0 && m.is_finite())
        && r.tenure_months.is_some_and(f64::is_finite)
        && r.race_code.is_some()
        && r.sex.is_some()
        && r.age.is_some()
        && r.education_code.is_some()
}

/// Builds the canonical record. Annual earnings are twelve times the monthly
/// average, deflated, then logged.
fn to_record(year: i32, cz: Id, r: &RawWorkerRow, deflator: f64, cfg: &IngestConfig) -> JobRecord {
    let est = r.establishment_id.clone().expect("checked");
    let firm = Id::new(&est.as_str()[..FIRM_ROOT_LEN]);
    let industry = Id::new(&r.industry_code.as_ref().expect("checked").as_str()[..INDUSTRY_DIGITS]);
    let tradable = cfg.tradable.as_ref().is_none_or(|set| set.contains(&industry));
    let edu = r.education_code.expect("checked");
    JobRecord {
        worker_id: r.worker_id.clone().expect("checked"),
        firm_id: firm,
        establishment_id: est,
        year,
        city_code: r.city_code.clone().expect("checked"),
        commuting_zone: cz,
        industry_code: industry,
        tradable,
        log_earnings: (12.0 * r.monthly_earnings.expect("checked") * deflator).ln(),
        tenure_months: r.tenure_months.expect("checked").floor() as i32,
        admission_type: r.admission_type.unwrap_or(0),
        separation_code: r.separation_code,
        active_dec31: r.is_active(),
        age: r.age.expect("checked"),
        female: r.sex == Some(FEMALE_SEX_CODE),
        white: r.race_code == Some(WHITE_RACE_CODE),
        college: edu >= COLLEGE_MIN_EDUCATION,
        highschool: HIGHSCHOOL_EDUCATION.contains(&edu),
    }
}

/// Cleans one year of raw rows. Race harmonization is not applied here since it
/// needs every year of a worker's history.
pub fn clean_year(year: i32, rows: Vec<RawWorkerRow>, cfg: &IngestConfig) -> Result<YearOutput> {
    let deflator = *cfg
        .deflators
        .get(&year)
        .ok_or_else(|| Error::Config(format!("no deflator for year {year}")))?;
    let mut report = YearReport {
        year,
        rows_in: rows.len() as u64,
        ..Default::default()
    };
    let nonwhite: BTreeSet<Id> = rows
        .iter()
        .filter(|r| r.is_nonwhite())
        .filter_map(|r| r.worker_id.clone())
        .collect();

    let complete: Vec<RawWorkerRow> = rows.into_iter().filter(has_required_fields).collect();
    report.dropped_missing_fields = report.rows_in - complete.len() as u64;

    let (mapped, unmapped) = attach_geography(complete, &cfg.cz_map)?;
    report.dropped_unmapped_city = unmapped;

    let mut zone_of: BTreeMap<(Id, Id), Id> = BTreeMap::new();
    let mut active = Vec::new();
    let mut separations = Vec::new();
    for (cz, row) in mapped {
        if row.is_active() {
            let key = (
                row.worker_id.clone().expect("checked"),
                row.establishment_id.clone().expect("checked"),
            );
            zone_of.insert(key, cz);
            active.push(row);
        } else {
            report.dropped_inactive += 1;
            let rec = to_record(year, cz, &row, deflator, cfg);
            if rec.flows().separation && validate_record(&rec, &cfg.window).is_empty() {
                separations.push(rec);
            }
        }
    }

    let n_active = active.len() as u64;
    let best = dedup_highest_paying(active);
    report.dropped_lower_paying = n_active - best.len() as u64;

    let mut jobs = Vec::with_capacity(best.len());
    for row in &best {
        let key = (
            row.worker_id.clone().expect("checked"),
            row.establishment_id.clone().expect("checked"),
        );
        let cz = zone_of[&key].clone();
        let rec = to_record(year, cz, row, deflator, cfg);
        if validate_record(&rec, &cfg.window).is_empty() {
            jobs.push(rec);
        } else {
            report.dropped_invalid += 1;
        }
    }
    separations.sort_by(|a, b| (&a.worker_id, &a.establishment_id).cmp(&(&b.worker_id, &b.establishment_id)));
    report.rows_out = jobs.len() as u64;
    report.separations_out = separations.len() as u64;
    Ok(YearOutput {
        year,
        jobs,
        separations,
        report,
        nonwhite,
    })
}

/// Ingests a set of per-year files. Years are cleaned in parallel; race
/// harmonization then runs across all years. Output is ordered by year.
pub fn ingest_files(files: &[(i32, PathBuf)], cfg: &IngestConfig) -> Result<IngestOutput> {
    if cfg.cz_map.is_empty() {
        return Err(Error::Config("empty city → commuting zone map".into()));
    }
    let mut years: Vec<YearOutput> = files
        .par_iter()
        .map(|(year, path)| {
            let rows = read_raw(path, cfg.delimiter, cfg.encoding)?;
            clean_year(*year, rows, cfg)
        })
        .collect::<Result<_>>()?;
    years.sort_by_key(|y| y.year);

    let mut nonwhite: HashSet<Id> = HashSet::new();
    for y in &years {
        nonwhite.extend(y.nonwhite.iter().cloned());
        nonwhite.extend(y.jobs.iter().filter(|r| !r.white).map(|r| r.worker_id.clone()));
    }
    let mut harmonized: BTreeSet<Id> = BTreeSet::new();
    for y in &mut years {
        for r in y.jobs.iter_mut().chain(y.separations.iter_mut()) {
            if r.white && nonwhite.contains(&r.worker_id) {
                r.white = false;
                harmonized.insert(r.worker_id.clone());
            }
        }
    }
    let report = IngestReport {
        years: years.iter().map(|y| y.report.clone()).collect(),
        workers_harmonized_nonwhite: harmonized.len() as u64,
    };
    Ok(IngestOutput { years, report })
}

/// Two-column `city_code,commuting_zone` file.
pub fn read_cz_map(path: &Path) -> Result<BTreeMap<Id, Id>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    let (c, z) = (h.col("city_code")?, h.col("commuting_zone")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.insert(Id::new(h.field(&rec, c)), Id::new(h.field(&rec, z)));
    }
    Ok(out)
}

/// Two-column `year,factor` file.
pub fn read_deflators(path: &Path) -> Result<BTreeMap<i32, f64>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    let (y, f) = (h.col("year")?, h.col("factor")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let factor: f64 = h.parse(&rec, f)?;
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::schema(
                path.display().to_string(),
                format!("non-positive deflator {factor}"),
            ));
        }
        out.insert(h.parse(&rec, y)?, factor);
    }
    Ok(out)
}

/// One-column `industry_code` file of tradable 3-digit sectors.
pub fn read_tradable(path: &Path) -> Result<BTreeSet<Id>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    let c = h.col("industry_code")?;
    let mut out = BTreeSet::new();
    for rec in rdr.records() {
        out.insert(Id::new(h.field(&rec?, c)));
    }
    Ok(out)
}
