//! Canonical CSV files shared between stages.
//!
//! Job records are written one file per year (`jobs_<year>.csv`) with the
//! columns in [`JOB_COLUMNS`], in that order. Booleans are `0`/`1`, missing
//! optional codes are empty, and floats use the shortest representation that
//! round-trips exactly, so re-reading a file reproduces every field bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use csv::StringRecord;

use crate::error::{Error, Result};
use crate::model::{Id, JobRecord};

pub const JOB_COLUMNS: [&str; 19] = [
    "worker_id",
    "firm_id",
    "establishment_id",
    "year",
    "city_code",
    "commuting_zone",
    "industry_code",
    "tradable",
    "log_earnings",
    "tenure_months",
    "admission_type",
    "separation_code",
    "active_dec31",
    "age",
    "female",
    "white",
    "college",
    "highschool",
    "new_hire",
];

pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(f)))
}

pub fn csv_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(BufReader::new(f)))
}

/// Column lookup over a CSV header that fails with the missing column's name.
pub struct Header {
    file: String,
    names: Vec<String>,
}

impl Header {
    pub fn new(file: impl Into<String>, headers: &StringRecord) -> Self {
        Header {
            file: file.into(),
            names: headers.iter().map(|h| h.trim().to_owned()).collect(),
        }
    }

    pub fn read<R: std::io::Read>(file: &Path, rdr: &mut csv::Reader<R>) -> Result<Self> {
        let h = rdr.headers()?.clone();
        Ok(Header::new(file.display().to_string(), &h))
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::schema(&self.file, format!("missing column `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    /// Fails unless the header is exactly `expected`, in order.
    pub fn expect_exact(&self, expected: &[&str]) -> Result<()> {
        for (i, want) in expected.iter().enumerate() {
            match self.names.get(i) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(Error::schema(
                        &self.file,
                        format!("column {i} is `{got}`, expected `{want}`"),
                    ))
                }
                None => return Err(Error::schema(&self.file, format!("missing column `{want}`"))),
            }
        }
        if self.names.len() > expected.len() {
            return Err(Error::schema(
                &self.file,
                format!("unexpected column `{}`", self.names[expected.len()]),
            ));
        }
        Ok(())
    }

    pub fn field<'r>(&self, rec: &'r StringRecord, idx: usize) -> &'r str {
        rec.get(idx).unwrap_or("").trim()
    }

    pub fn parse<T: FromStr>(&self, rec: &StringRecord, idx: usize) -> Result<T> {
        let raw = self.field(rec, idx);
        raw.parse().map_err(|_| {
            Error::schema(
                &self.file,
                format!(
                    "line {}: cannot parse `{raw}` in column `{}`",
                    rec.position().map_or(0, |p| p.line()),
                    self.names[idx]
                ),
            )
        })
    }

    pub fn parse_opt<T: FromStr>(&self, rec: &StringRecord, idx: usize) -> Result<Option<T>> {
        if self.field(rec, idx).is_empty() {
            Ok(None)
        } else {
            self.parse(rec, idx).map(Some)
        }
    }

    pub fn parse_bool(&self, rec: &StringRecord, idx: usize) -> Result<bool> {
        match self.field(rec, idx) {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(Error::schema(
                &self.file,
                format!("expected 0/1 in column `{}`, got `{other}`", self.names[idx]),
            )),
        }
    }
}

fn b01(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_jobs(path: &Path, records: &[JobRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(JOB_COLUMNS)?;
    for r in records {
        let flows = r.flows();
        w.write_record([
            r.worker_id.as_str(),
            r.firm_id.as_str(),
            r.establishment_id.as_str(),
            &r.year.to_string(),
            r.city_code.as_str(),
            r.commuting_zone.as_str(),
            r.industry_code.as_str(),
            b01(r.tradable),
            &fmt_f64(r.log_earnings),
            &r.tenure_months.to_string(),
            &r.admission_type.to_string(),
            &r.separation_code.map(|c| c.to_string()).unwrap_or_default(),
            b01(r.active_dec31),
            &r.age.to_string(),
            b01(r.female),
            b01(r.white),
            b01(r.college),
            b01(r.highschool),
            b01(flows.new_hire),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_jobs(path: &Path) -> Result<Vec<JobRecord>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    h.expect_exact(&JOB_COLUMNS)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = |i: usize| Id::new(h.field(&rec, i));
        out.push(JobRecord {
            worker_id: id(0),
            firm_id: id(1),
            establishment_id: id(2),
            year: h.parse(&rec, 3)?,
            city_code: id(4),
            commuting_zone: id(5),
            industry_code: id(6),
            tradable: h.parse_bool(&rec, 7)?,
            log_earnings: h.parse(&rec, 8)?,
            tenure_months: h.parse(&rec, 9)?,
            admission_type: h.parse(&rec, 10)?,
            separation_code: h.parse_opt(&rec, 11)?,
            active_dec31: h.parse_bool(&rec, 12)?,
            age: h.parse(&rec, 13)?,
            female: h.parse_bool(&rec, 14)?,
            white: h.parse_bool(&rec, 15)?,
            college: h.parse_bool(&rec, 16)?,
            highschool: h.parse_bool(&rec, 17)?,
        });
    }
    Ok(out)
}
