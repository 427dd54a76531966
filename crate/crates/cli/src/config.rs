//! Run configuration: one TOML file with a section per stage. Command-line
//! flags override individual fields after the file is read.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use llmerge_core::did::{EstimatorConfig, OverallMethod, Weighting};
use llmerge_core::inference::{BootstrapRun, IntervalKind, Multiplier};
use llmerge_core::ingest::Encoding;
use llmerge_core::model::{Outcome, YearWindow};
use llmerge_core::synth::SynthConfig;
use llmerge_core::{Error, Result, Split, Subpop};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EventType {
    #[default]
    All,
    OutOfMarket,
    HighImpact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw inputs: yearly worker files, registry and lookup tables.
    pub data_root: PathBuf,
    /// Stage outputs, one subdirectory per stage.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_root: "data".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub first_year: i32,
    pub last_year: i32,
    /// File name with `{year}` standing for the year.
    pub file_pattern: String,
    pub delimiter: char,
    pub encoding: Encoding,
    pub cz_map: String,
    pub deflators: String,
    pub tradable: Option<String>,
    pub registry: String,
    pub registry_delimiter: char,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            first_year: 2003,
            last_year: 2017,
            file_pattern: "rais_{year}.txt".into(),
            delimiter: ';',
            encoding: Encoding::Utf8,
            cz_map: "cz_map.csv".into(),
            deflators: "deflators.csv".into(),
            tradable: Some("tradable.csv".into()),
            registry: "registry.csv".into(),
            registry_delimiter: ',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketsSection {
    pub high_impact_percentile: f64,
    pub tradable_only: bool,
}

impl Default for MarketsSection {
    fn default() -> Self {
        MarketsSection {
            high_impact_percentile: 85.0,
            tradable_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub zeta: u32,
    pub window: u32,
    pub weighting: Weighting,
    pub outcomes: Vec<Outcome>,
    pub splits: Vec<Split>,
    pub subpops: Vec<Subpop>,
    pub event_type: EventType,
    pub overall_lags: Vec<i32>,
    pub overall_method: OverallMethod,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            zeta: 0,
            window: 5,
            weighting: Weighting::EmploymentBase,
            outcomes: vec![
                Outcome::Theta,
                Outcome::LogEmployment,
                Outcome::Hhi,
                Outcome::LogHires,
                Outcome::LogSeparations,
                Outcome::LogFirms,
            ],
            splits: vec![Split::All, Split::Merging, Split::Spillover],
            subpops: vec![Subpop::All, Subpop::NewHires, Subpop::Incumbents],
            event_type: EventType::All,
            overall_lags: (0..=5).collect(),
            overall_method: OverallMethod::EventStudy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub draws: usize,
    pub multiplier: Multiplier,
    pub alpha: f64,
    pub interval: IntervalKind,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection {
            draws: 999,
            multiplier: Multiplier::Mammen,
            alpha: 0.05,
            interval: IntervalKind::Percentile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds both the bootstrap and the synthetic generator.
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// `all` starts by generating the data root from `[simulate]`.
    pub synthetic: bool,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub markets: MarketsSection,
    pub estimate: EstimateSection,
    pub bootstrap: BootstrapSection,
    pub simulate: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 0,
            synthetic: false,
            paths: Paths::default(),
            ingest: IngestSection::default(),
            markets: MarketsSection::default(),
            estimate: EstimateSection::default(),
            bootstrap: BootstrapSection::default(),
            simulate: SynthConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_root: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub zeta: Option<u32>,
    pub window: Option<u32>,
    pub event_type: Option<EventType>,
    pub draws: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.data_root {
            self.paths.data_root = v.clone();
        }
        if let Some(v) = &o.output {
            self.paths.output = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
        if let Some(v) = o.zeta {
            self.estimate.zeta = v;
        }
        if let Some(v) = o.window {
            self.estimate.window = v;
        }
        if let Some(v) = o.event_type {
            self.estimate.event_type = v;
        }
        if let Some(v) = o.draws {
            self.bootstrap.draws = v;
        }
        self.simulate.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.window()?;
        self.estimator(Outcome::Theta).validate()?;
        self.bootstrap_run().validate()?;
        let p = self.markets.high_impact_percentile;
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::Config(format!(
                "high_impact_percentile {p} outside (0, 100]"
            )));
        }
        if !self.ingest.file_pattern.contains("{year}") {
            return Err(Error::Config("file_pattern must contain `{year}`".into()));
        }
        for (name, c) in [
            ("delimiter", self.ingest.delimiter),
            ("registry_delimiter", self.ingest.registry_delimiter),
        ] {
            if !c.is_ascii() {
                return Err(Error::Config(format!("{name} must be a single ASCII character")));
            }
        }
        if self.estimate.outcomes.is_empty()
            || self.estimate.splits.is_empty()
            || self.estimate.subpops.is_empty()
        {
            return Err(Error::Config(
                "estimate needs at least one outcome, split and subpop".into(),
            ));
        }
        Ok(())
    }

    pub fn window(&self) -> Result<YearWindow> {
        YearWindow::new(self.ingest.first_year, self.ingest.last_year)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn estimator(&self, outcome: Outcome) -> EstimatorConfig {
        EstimatorConfig {
            zeta: self.estimate.zeta,
            window: self.estimate.window,
            weighting: self.estimate.weighting,
            outcome,
            overall_lags: self.estimate.overall_lags.clone(),
            overall_method: self.estimate.overall_method,
        }
    }

    pub fn bootstrap_run(&self) -> BootstrapRun {
        BootstrapRun {
            draws: self.bootstrap.draws,
            multiplier: self.bootstrap.multiplier,
            seed: self.seed,
            alpha: self.bootstrap.alpha,
        }
    }

    pub fn raw_file(&self, year: i32) -> PathBuf {
        self.paths
            .data_root
            .join(self.ingest.file_pattern.replace("{year}", &year.to_string()))
    }

    /// SHA-256 of the configuration without paths and thread count, which do
    /// not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths {
            data_root: PathBuf::new(),
            output: PathBuf::new(),
        };
        c.threads = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
