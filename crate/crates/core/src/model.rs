//! Domain types shared by every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque registry or survey identifier.
///
/// Never parsed as a number: zero-padded codes such as CNPJ roots keep their
/// leading zeros and compare as strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Id(String);

impl Id {
    pub fn new(s: impl Into<String>) -> Self {
        Id(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Id {
    fn from(s: &str) -> Self {
        Id(s.to_owned())
    }
}

impl From<String> for Id {
    fn from(s: String) -> Self {
        Id(s)
    }
}

/// Inclusive range of calendar years under observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearWindow {
    pub first: i32,
    pub last: i32,
}

impl YearWindow {
    pub fn new(first: i32, last: i32) -> Result<Self> {
        if last < first {
            return Err(Error::Config(format!("empty year window {first}..={last}")));
        }
        Ok(YearWindow { first, last })
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }
}

/// One worker-year employment relationship after ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub worker_id: Id,
    pub firm_id: Id,
    pub establishment_id: Id,
    pub year: i32,
    pub city_code: Id,
    pub commuting_zone: Id,
    pub industry_code: Id,
    pub tradable: bool,
    /// Log of deflated annual earnings (2010 BRL).
    pub log_earnings: f64,
    pub tenure_months: i32,
    pub admission_type: u8,
    pub separation_code: Option<u8>,
    pub active_dec31: bool,
    pub age: u8,
    pub female: bool,
    pub white: bool,
    pub college: bool,
    pub highschool: bool,
}

impl JobRecord {
    pub fn market(&self) -> MarketKey {
        MarketKey::new(self.commuting_zone.clone(), self.industry_code.clone())
    }

    pub fn flows(&self) -> FlowFlags {
        FlowFlags::of(self)
    }
}

/// Hire / separation / incumbency classification of one job record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowFlags {
    pub new_hire: bool,
    pub incumbent: bool,
    pub separation: bool,
}

/// Admission types that record transfers rather than genuine hires.
pub const SPURIOUS_ADMISSION_TYPES: [u8; 2] = [3, 4];
/// Separation reasons that record transfers rather than genuine separations.
pub const TRANSFER_SEPARATION_CODES: [u8; 2] = [30, 31];
pub const NEW_HIRE_MAX_TENURE: i32 = 12;
pub const INCUMBENT_MIN_TENURE: i32 = 30;

impl FlowFlags {
    pub fn of(r: &JobRecord) -> Self {
        FlowFlags {
            new_hire: r.active_dec31 && is_recent_admission(r.tenure_months, r.admission_type),
            incumbent: r.active_dec31 && r.tenure_months >= INCUMBENT_MIN_TENURE,
            separation: matches!(r.separation_code, Some(c) if !TRANSFER_SEPARATION_CODES.contains(&c)),
        }
    }
}

pub(crate) fn is_recent_admission(tenure_months: i32, admission_type: u8) -> bool {
    tenure_months <= NEW_HIRE_MAX_TENURE && !SPURIOUS_ADMISSION_TYPES.contains(&admission_type)
}

/// A record invariant that does not hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    Tenure,
    Age,
    Year,
    Hierarchy,
    MissingId,
    Earnings,
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::Tenure => "tenure",
            Violation::Age => "age",
            Violation::Year => "year",
            Violation::Hierarchy => "hierarchy",
            Violation::MissingId => "missing_id",
            Violation::Earnings => "earnings",
        }
    }
}

pub const MIN_AGE: u8 = 14;
pub const MAX_AGE: u8 = 100;

/// Returns every invariant `r` violates; an empty list means the record is valid.
pub fn validate_record(r: &JobRecord, window: &YearWindow) -> Vec<Violation> {
    let mut out = Vec::new();
    if r.tenure_months < 0 {
        out.push(Violation::Tenure);
    }
    if !(MIN_AGE..=MAX_AGE).contains(&r.age) {
        out.push(Violation::Age);
    }
    if !window.contains(r.year) {
        out.push(Violation::Year);
    }
    if r.worker_id.is_empty() || r.firm_id.is_empty() || r.establishment_id.is_empty() {
        out.push(Violation::MissingId);
    } else if !r.establishment_id.as_str().starts_with(r.firm_id.as_str()) {
        out.push(Violation::Hierarchy);
    }
    if !r.log_earnings.is_finite() {
        out.push(Violation::Earnings);
    }
    out
}

/// A local labor market: commuting zone × 3-digit industry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MarketKey {
    pub commuting_zone: Id,
    pub industry_code: Id,
}

impl MarketKey {
    pub fn new(commuting_zone: impl Into<Id>, industry_code: impl Into<Id>) -> Self {
        MarketKey {
            commuting_zone: commuting_zone.into(),
            industry_code: industry_code.into(),
        }
    }
}

impl fmt::Display for MarketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.commuting_zone, self.industry_code)
    }
}

/// Which employers of a market enter an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    All,
    /// Only firms that are party to the market's merger (targets and counterparts).
    Merging,
    /// Every other firm in the market.
    Spillover,
}

/// Which workers enter an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subpop {
    All,
    NewHires,
    Incumbents,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($variant => $s),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

str_enum!(Split { Split::All => "all", Split::Merging => "merging", Split::Spillover => "spillover" });
str_enum!(Subpop { Subpop::All => "all", Subpop::NewHires => "new_hires", Subpop::Incumbents => "incumbents" });

impl Subpop {
    /// Whether a job with this tenure and admission type belongs to the subpopulation.
    pub fn admits(&self, tenure_months: i32, admission_type: u8) -> bool {
        match self {
            Subpop::All => true,
            Subpop::NewHires => is_recent_admission(tenure_months, admission_type),
            Subpop::Incumbents => tenure_months >= INCUMBENT_MIN_TENURE,
        }
    }
}

/// Aggregated outcomes of one market in one year for one (split, subpop) slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketYearOutcomes {
    pub market: MarketKey,
    pub year: i32,
    pub cohort: Option<i32>,
    pub employment: u64,
    pub n_firms: u64,
    pub hhi: f64,
    pub theta: Option<f64>,
    pub hires: u64,
    pub separations: u64,
    /// Market employment over total panel employment in the same year.
    pub weight: f64,
    pub split: Split,
    pub subpop: Subpop,
}

fn ln_count(n: u64) -> Option<f64> {
    (n > 0).then(|| (n as f64).ln())
}

impl MarketYearOutcomes {
    pub fn outcome(&self, which: Outcome) -> Option<f64> {
        match which {
            Outcome::Theta => self.theta,
            Outcome::LogEmployment => ln_count(self.employment),
            Outcome::Hhi => (self.employment > 0).then_some(self.hhi),
            Outcome::LogHires => ln_count(self.hires),
            Outcome::LogSeparations => ln_count(self.separations),
            Outcome::LogFirms => ln_count(self.n_firms),
        }
    }
}

/// Outcome column selector for estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Theta,
    LogEmployment,
    Hhi,
    LogHires,
    LogSeparations,
    #[serde(rename = "log_n_firms")]
    LogFirms,
}

str_enum!(Outcome {
    Outcome::Theta => "theta",
    Outcome::LogEmployment => "log_employment",
    Outcome::Hhi => "hhi",
    Outcome::LogHires => "log_hires",
    Outcome::LogSeparations => "log_separations",
    Outcome::LogFirms => "log_n_firms",
});

impl Outcome {
    /// Log outcomes read as approximate relative changes; HHI is in levels.
    pub fn is_log(&self) -> bool {
        !matches!(self, Outcome::Hhi)
    }
}

/// First treatment year per market; `None` marks a never-treated market.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortMap {
    cohorts: BTreeMap<MarketKey, Option<i32>>,
}

impl CohortMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a market. Treatment is irreversible, so a market that already
    /// carries a cohort cannot be assigned a different one.
    pub fn assign(&mut self, market: MarketKey, g: Option<i32>) -> Result<()> {
        match self.cohorts.get(&market) {
            Some(prev) if *prev != g => Err(Error::Domain(format!(
                "market {market} already assigned cohort {prev:?}, refusing {g:?}"
            ))),
            _ => {
                self.cohorts.insert(market, g);
                Ok(())
            }
        }
    }

    pub fn get(&self, market: &MarketKey) -> Option<Option<i32>> {
        self.cohorts.get(market).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MarketKey, Option<i32>)> {
        self.cohorts.iter().map(|(k, g)| (k, *g))
    }

    pub fn len(&self) -> usize {
        self.cohorts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cohorts.is_empty()
    }

    /// Distinct treatment years, ascending.
    pub fn groups(&self) -> Vec<i32> {
        let mut gs: Vec<i32> = self.cohorts.values().flatten().copied().collect();
        gs.sort_unstable();
        gs.dedup();
        gs
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&MarketKey, Option<i32>) -> bool) {
        self.cohorts.retain(|k, g| keep(k, *g));
    }

    pub fn validate(&self, window: &YearWindow) -> Result<()> {
        for (m, g) in self.iter() {
            if let Some(g) = g {
                if !window.contains(g) {
                    return Err(Error::Domain(format!(
                        "cohort {g} of market {m} outside window {}..={}",
                        window.first, window.last
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One group-time average treatment effect.
///
/// `influence` holds `(market index, contribution)` pairs where the index refers
/// to the market ordering of the estimation panel. Contributions are recentered
/// within the treated and control sets, so they sum to zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttCell {
    pub g: i32,
    pub t: i32,
    pub zeta: u32,
    pub base_year: i32,
    pub estimate: f64,
    pub influence: Vec<(usize, f64)>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl AttCell {
    pub fn lag(&self) -> i32 {
        self.t - self.g
    }
}

/// One point of the event-study curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagEstimate {
    pub lag: i32,
    pub beta: f64,
    pub se: f64,
    pub pointwise: (f64, f64),
    pub band: (f64, f64),
    /// Cohort weights `(g, share)` entering this lag.
    pub cohort_weights: Vec<(i32, f64)>,
}

/// Aggregated event-study coefficients indexed by exposure length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventStudyCurve {
    pub zeta: u32,
    pub lags: BTreeMap<i32, LagEstimate>,
    pub sup_t_critical: f64,
}

impl EventStudyCurve {
    pub fn normalization_lag(&self) -> i32 {
        -(self.zeta as i32) - 1
    }

    pub fn beta(&self, lag: i32) -> Option<f64> {
        self.lags.get(&lag).map(|e| e.beta)
    }
}
