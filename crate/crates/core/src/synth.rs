//! Synthetic matched employer-employee data with known effects.
//!
//! Market-year outcomes follow an additive process
//! `Y = μ_m + λ_t + τ(t - g_m) + ε`, for the wage index and for log
//! employment. The worker-level generator builds establishments and rosters
//! on top of those draws, routes a coalition of each merger target's workers
//! to the designated counterpart, and writes raw yearly files that look like
//! administrative extracts, noise included.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::did::OutcomePanel;
use crate::error::{Error, Result};
use crate::events::RegistryRow;
use crate::ingest::{RawWorkerRow, RAW_COLUMNS, WHITE_RACE_CODE};
use crate::io::{csv_writer, fmt_f64};
use crate::model::{Id, MarketKey, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortShare {
    pub year: i32,
    pub share: f64,
}

/// τ(l): `dynamic[l]` for the first post lags, `post` after that, and
/// `anticipation` at l = -1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectPath {
    pub outcome: Outcome,
    pub post: f64,
    pub anticipation: f64,
    pub dynamic: Vec<f64>,
}

impl Default for EffectPath {
    fn default() -> Self {
        EffectPath {
            outcome: Outcome::Theta,
            post: 0.0,
            anticipation: 0.0,
            dynamic: vec![],
        }
    }
}

impl EffectPath {
    pub fn at(&self, lag: i32) -> f64 {
        match lag {
            l if l >= 0 => self.dynamic.get(l as usize).copied().unwrap_or(self.post),
            -1 => self.anticipation,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergerRules {
    /// Share of events whose counterpart has no establishment in the market.
    pub out_of_market_fraction: f64,
    /// Share of the target's workforce moving to the counterpart.
    pub coalition_share: f64,
    /// Share scattered one by one over other employers in the market.
    pub scatter_share: f64,
}

impl Default for MergerRules {
    fn default() -> Self {
        MergerRules {
            out_of_market_fraction: 0.5,
            coalition_share: 0.6,
            scatter_share: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseRules {
    /// Probability that a worker-year also has a lower-paying second job.
    pub duplicate_rate: f64,
    /// Rows with an unmapped city code, as a share of active rows.
    pub unmapped_rate: f64,
    /// Probability that a non-white worker is reported white in a given year.
    pub race_flip_rate: f64,
}

impl Default for NoiseRules {
    fn default() -> Self {
        NoiseRules {
            duplicate_rate: 0.02,
            unmapped_rate: 0.01,
            race_flip_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_markets: usize,
    pub n_industries: usize,
    /// Trailing industries flagged non-tradable.
    pub nontradable_industries: usize,
    pub first_year: i32,
    pub last_year: i32,
    /// First-treatment years and market shares; the rest is never treated.
    pub cohorts: Vec<CohortShare>,
    pub effects: Vec<EffectPath>,
    /// Inclusive ranges.
    pub firms_per_market: [usize; 2],
    pub workers_per_firm: [usize; 2],
    pub theta_mean: f64,
    pub market_fe_sd: f64,
    pub year_fe_sd: f64,
    /// Market-year noise of the wage index.
    pub noise_sd: f64,
    pub employment_noise_sd: f64,
    pub worker_noise_sd: f64,
    /// female, white, college, highschool, age, age².
    pub covariate_betas: [f64; 6],
    /// Annual probability that an incumbent leaves.
    pub turnover: f64,
    pub mergers: MergerRules,
    pub noise: NoiseRules,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_markets: 120,
            n_industries: 10,
            nontradable_industries: 0,
            first_year: 2003,
            last_year: 2017,
            cohorts: vec![
                CohortShare {
                    year: 2008,
                    share: 0.1,
                },
                CohortShare {
                    year: 2010,
                    share: 0.1,
                },
                CohortShare {
                    year: 2012,
                    share: 0.1,
                },
                CohortShare {
                    year: 2015,
                    share: 0.1,
                },
            ],
            effects: vec![],
            firms_per_market: [3, 8],
            workers_per_firm: [5, 30],
            theta_mean: 10.0,
            market_fe_sd: 0.3,
            year_fe_sd: 0.05,
            noise_sd: 0.02,
            employment_noise_sd: 0.02,
            worker_noise_sd: 0.3,
            covariate_betas: [-0.2, 0.1, 0.6, 0.25, 0.05, -0.0005],
            turnover: 0.15,
            mergers: MergerRules::default(),
            noise: NoiseRules::default(),
        }
    }
}

const MAX_INDUSTRIES: usize = 128;

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_markets == 0 {
            return bad("n_markets must be positive".into());
        }
        if self.n_industries == 0 || self.n_industries > MAX_INDUSTRIES {
            return bad(format!("n_industries must lie in 1..={MAX_INDUSTRIES}"));
        }
        if self.last_year <= self.first_year {
            return bad("last_year must exceed first_year".into());
        }
        let [fmin, fmax] = self.firms_per_market;
        let [wmin, wmax] = self.workers_per_firm;
        if fmin == 0 || fmin > fmax {
            return bad("firms_per_market needs 1 <= min <= max".into());
        }
        if wmin == 0 || wmin > wmax {
            return bad("workers_per_firm needs 1 <= min <= max".into());
        }
        let total: f64 = self.cohorts.iter().map(|c| c.share).sum();
        if total > 1.0 + 1e-12 || self.cohorts.iter().any(|c| c.share < 0.0) {
            return bad("cohort shares must be non-negative and sum to at most 1".into());
        }
        let years: BTreeSet<i32> = self.cohorts.iter().map(|c| c.year).collect();
        if years.len() != self.cohorts.len() {
            return bad("duplicate cohort year".into());
        }
        for c in &self.cohorts {
            if c.year <= self.first_year || c.year > self.last_year {
                return bad(format!("cohort {} has no base year inside the panel", c.year));
            }
        }
        let outcomes: BTreeSet<Outcome> = self.effects.iter().map(|e| e.outcome).collect();
        if outcomes.len() != self.effects.len() {
            return bad("duplicate effect outcome".into());
        }
        if let Some(e) = self
            .effects
            .iter()
            .find(|e| !matches!(e.outcome, Outcome::Theta | Outcome::LogEmployment))
        {
            return bad(format!(
                "effects can be planted on theta and log_employment, not {}",
                e.outcome
            ));
        }
        for (name, v) in [
            ("market_fe_sd", self.market_fe_sd),
            ("year_fe_sd", self.year_fe_sd),
            ("noise_sd", self.noise_sd),
            ("employment_noise_sd", self.employment_noise_sd),
            ("worker_noise_sd", self.worker_noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        unit("turnover", self.turnover)?;
        unit("out_of_market_fraction", self.mergers.out_of_market_fraction)?;
        unit("coalition_share", self.mergers.coalition_share)?;
        unit("scatter_share", self.mergers.scatter_share)?;
        if self.mergers.coalition_share + self.mergers.scatter_share > 1.0 {
            return bad("coalition_share + scatter_share exceeds 1".into());
        }
        unit("duplicate_rate", self.noise.duplicate_rate)?;
        unit("unmapped_rate", self.noise.unmapped_rate)?;
        unit("race_flip_rate", self.noise.race_flip_rate)?;
        Ok(())
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first_year..=self.last_year
    }

    fn n_years(&self) -> usize {
        (self.last_year - self.first_year + 1) as usize
    }

    pub fn effect(&self, outcome: Outcome) -> Option<&EffectPath> {
        self.effects.iter().find(|e| e.outcome == outcome)
    }

    fn tau(&self, outcome: Outcome, cohort: Option<i32>, year: i32) -> f64 {
        match (self.effect(outcome), cohort) {
            (Some(e), Some(g)) => e.at(year - g),
            _ => 0.0,
        }
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated sd")
}

/// Market-level draws shared by both generators.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDraws {
    pub markets: Vec<MarketKey>,
    pub cohort: Vec<Option<i32>>,
    /// Firm size weights per market; their sum is the market's base size.
    pub firm_sizes: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub log_employment: Vec<Vec<f64>>,
}

fn market_key(cfg: &SynthConfig, m: usize) -> MarketKey {
    MarketKey::new(cz_code(m / cfg.n_industries), industry_code(m % cfg.n_industries))
}

fn cz_code(c: usize) -> String {
    format!("{:05}", 11_000 + c)
}

fn industry_code(i: usize) -> String {
    format!("{:03}", 100 + 7 * i)
}

fn city_code(c: usize, k: usize) -> String {
    format!("{:07}", 3_100_000 + 10 * c + k)
}

const UNMAPPED_CITY: &str = "9999999";

pub fn draw_markets(cfg: &SynthConfig) -> Result<MarketDraws> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_markets;
    let markets: Vec<MarketKey> = (0..n).map(|m| market_key(cfg, m)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cohort = vec![None; n];
    let mut next = 0;
    let mut acc = 0.0;
    for c in &cfg.cohorts {
        acc += c.share;
        let upto = ((acc * n as f64).round() as usize).min(n);
        for &m in &order[next..upto] {
            cohort[m] = Some(c.year);
        }
        next = upto.max(next);
    }

    let [fmin, fmax] = cfg.firms_per_market;
    let [wmin, wmax] = cfg.workers_per_firm;
    let firm_sizes: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let k = rng.random_range(fmin..=fmax);
            (0..k).map(|_| rng.random_range(wmin..=wmax) as f64).collect()
        })
        .collect();

    let mu: Vec<f64> = (0..n)
        .map(|_| cfg.theta_mean + normal(cfg.market_fe_sd).sample(&mut rng))
        .collect();
    let lambda: Vec<f64> = cfg
        .years()
        .map(|_| normal(cfg.year_fe_sd).sample(&mut rng))
        .collect();
    let lambda_emp: Vec<f64> = cfg
        .years()
        .map(|_| normal(cfg.year_fe_sd).sample(&mut rng))
        .collect();
    let mut theta = Vec::with_capacity(n);
    let mut log_employment = Vec::with_capacity(n);
    for m in 0..n {
        let base = firm_sizes[m].iter().sum::<f64>().ln();
        let mut th = Vec::with_capacity(cfg.n_years());
        let mut le = Vec::with_capacity(cfg.n_years());
        for (k, t) in cfg.years().enumerate() {
            th.push(
                mu[m]
                    + lambda[k]
                    + cfg.tau(Outcome::Theta, cohort[m], t)
                    + normal(cfg.noise_sd).sample(&mut rng),
            );
            le.push(
                base + lambda_emp[k]
                    + cfg.tau(Outcome::LogEmployment, cohort[m], t)
                    + normal(cfg.employment_noise_sd).sample(&mut rng),
            );
        }
        theta.push(th);
        log_employment.push(le);
    }
    Ok(MarketDraws {
        markets,
        cohort,
        firm_sizes,
        theta,
        log_employment,
    })
}

/// Market-level panel of the planted wage index, weighted by planted
/// employment. Skips the worker layer entirely.
pub fn generate_market_panel(cfg: &SynthConfig) -> Result<OutcomePanel> {
    let d = draw_markets(cfg)?;
    let years: Vec<i32> = cfg.years().collect();
    let mut w: Vec<Vec<f64>> = d
        .log_employment
        .iter()
        .map(|r| r.iter().map(|v| v.exp()).collect())
        .collect();
    for k in 0..years.len() {
        let total: f64 = w.iter().map(|r| r[k]).sum();
        for row in &mut w {
            row[k] /= total;
        }
    }
    OutcomePanel::new(years, d.markets, d.cohort, d.theta, w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthEvent {
    pub market: MarketKey,
    pub event_year: i32,
    pub target_establishment: Id,
    pub target_firm: Id,
    pub counterpart_firm: Id,
    pub within_market: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub cohorts: BTreeMap<MarketKey, Option<i32>>,
    pub events: Vec<TruthEvent>,
    pub effects: Vec<EffectPath>,
    pub covariate_betas: [f64; 6],
    /// Planted θ per market and year.
    pub theta: BTreeMap<(MarketKey, i32), f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub raw: BTreeMap<i32, Vec<RawWorkerRow>>,
    pub registry: Vec<RegistryRow>,
    pub cz_map: BTreeMap<Id, Id>,
    pub deflators: BTreeMap<i32, f64>,
    pub tradable: BTreeSet<Id>,
    pub truth: Truth,
}

#[derive(Debug, Clone)]
struct Worker {
    id: Id,
    tenure: i32,
    age: u8,
    female: bool,
    nonwhite_code: Option<u8>,
    education: u8,
    admission_type: u8,
}

impl Worker {
    fn covariates(&self) -> [f64; 6] {
        let a = self.age as f64;
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        [
            b(self.female),
            b(self.nonwhite_code.is_none()),
            b(self.education >= 9),
            b(matches!(self.education, 7 | 8)),
            a,
            a * a,
        ]
    }
}

#[derive(Debug, Clone)]
struct Establishment {
    firm: Id,
    id: Id,
    industry: Id,
    city: Id,
    share: f64,
}

enum Partner {
    Within(usize),
    Outside(Establishment),
}

struct MarketPlan {
    establishments: Vec<Establishment>,
    event: Option<(usize, Partner)>,
}

const NONWHITE_CODES: [u8; 4] = [1, 4, 6, 8];
const SEPARATION_CODES: [(u8, f64); 3] = [(11, 0.5), (21, 0.4), (30, 0.1)];
const RETIREMENT_AGE: u8 = 70;

fn firm_root(counter: usize) -> String {
    format!("{:08}", 10_000_000 + counter)
}

fn plan_markets(cfg: &SynthConfig, d: &MarketDraws, rng: &mut ChaCha8Rng) -> Vec<MarketPlan> {
    let mut counter = 0;
    let mut plans: Vec<MarketPlan> = d
        .firm_sizes
        .iter()
        .enumerate()
        .map(|(m, sizes)| {
            let total: f64 = sizes.iter().sum();
            let c = m / cfg.n_industries;
            let ind = industry_code(m % cfg.n_industries);
            let establishments = sizes
                .iter()
                .map(|s| {
                    let root = firm_root(counter);
                    counter += 1;
                    Establishment {
                        id: Id::new(format!("{root}000100")),
                        firm: Id::new(root),
                        industry: Id::new(format!("{ind}{:02}", rng.random_range(10..100))),
                        city: Id::new(city_code(c, rng.random_range(0..2))),
                        share: s / total,
                    }
                })
                .collect();
            MarketPlan {
                establishments,
                event: None,
            }
        })
        .collect();
    for m in 0..plans.len() {
        if d.cohort[m].is_none() {
            continue;
        }
        let k = plans[m].establishments.len();
        let outside = k == 1 || (cfg.n_markets > 1 && rng.random_bool(cfg.mergers.out_of_market_fraction));
        let target = rng.random_range(0..k);
        let partner = if outside && cfg.n_markets > 1 {
            let mut other = rng.random_range(0..cfg.n_markets - 1);
            if other >= m {
                other += 1;
            }
            let donor = plans[other]
                .establishments
                .choose(rng)
                .expect("markets have firms")
                .clone();
            let t = &plans[m].establishments[target];
            Partner::Outside(Establishment {
                id: Id::new(format!("{}{:06}", donor.firm, 200_000 + m)),
                firm: donor.firm,
                industry: t.industry.clone(),
                city: t.city.clone(),
                share: 0.0,
            })
        } else if k == 1 {
            // Single-firm market in a one-market world: nothing to merge with.
            continue;
        } else {
            let mut c = rng.random_range(0..k - 1);
            if c >= target {
                c += 1;
            }
            Partner::Within(c)
        };
        plans[m].event = Some((target, partner));
    }
    plans
}

/// Largest-remainder split of `total` over `shares`, at least one each.
fn allocate(total: usize, shares: &[f64]) -> Vec<usize> {
    let k = shares.len();
    let total = total.max(k);
    let s: f64 = shares.iter().sum();
    let free = (total - k) as f64;
    let raw: Vec<f64> = shares.iter().map(|x| free * x / s).collect();
    let mut out: Vec<usize> = raw.iter().map(|x| 1 + x.floor() as usize).collect();
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

struct RowCtx<'a> {
    year: i32,
    est: &'a Establishment,
    log_wage: f64,
    deflator: f64,
}

fn raw_row(w: &Worker, ctx: &RowCtx<'_>, separation: Option<u8>, race_code: u8) -> RawWorkerRow {
    let monthly = (ctx.log_wage.exp() / (12.0 * ctx.deflator) * 100.0).round() / 100.0;
    let adm_year = ctx.year - w.tenure / 12;
    let adm_month = 12 - w.tenure % 12;
    RawWorkerRow {
        worker_id: Some(w.id.clone()),
        establishment_id: Some(ctx.est.id.clone()),
        city_code: Some(ctx.est.city.clone()),
        industry_code: Some(ctx.est.industry.clone()),
        dec31_status: Some(u8::from(separation.is_none())),
        monthly_earnings: Some(monthly),
        contract_hours: Some(44.0),
        admission_date: Some(format!("01/{adm_month:02}/{adm_year}")),
        admission_type: Some(w.admission_type),
        separation_code: separation,
        tenure_months: Some(w.tenure as f64),
        race_code: Some(race_code),
        sex: Some(if w.female { 2 } else { 1 }),
        age: Some(w.age),
        education_code: Some(w.education),
    }
}

struct MarketSim<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    m: usize,
    next_worker: usize,
}

impl MarketSim<'_> {
    fn hire(&mut self, tenure: i32, age: Option<u8>) -> Worker {
        let id = Id::new(format!("{:05}{:06}", self.m, self.next_worker));
        self.next_worker += 1;
        let r = &mut self.rng;
        let education = match r.random::<f64>() {
            x if x < 0.25 => r.random_range(9..=11),
            x if x < 0.7 => r.random_range(7..=8),
            _ => r.random_range(1..=6),
        };
        Worker {
            id,
            tenure,
            age: age.unwrap_or_else(|| r.random_range(18..=60)),
            female: r.random_bool(0.4),
            nonwhite_code: r
                .random_bool(0.45)
                .then(|| *NONWHITE_CODES.choose(r).expect("nonempty")),
            education,
            admission_type: if r.random_bool(0.05) {
                4
            } else {
                r.random_range(1..=2)
            },
        }
    }

    fn log_wage(&mut self, w: &Worker, theta: f64) -> f64 {
        let x = w.covariates();
        let xb: f64 = x.iter().zip(&self.cfg.covariate_betas).map(|(a, b)| a * b).sum();
        theta + xb + normal(self.cfg.worker_noise_sd).sample(&mut self.rng)
    }

    fn race_code(&mut self, w: &Worker) -> u8 {
        match w.nonwhite_code {
            Some(c) if !self.rng.random_bool(self.cfg.noise.race_flip_rate) => c,
            _ => WHITE_RACE_CODE,
        }
    }

    fn separation_code(&mut self) -> u8 {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (code, p) in SEPARATION_CODES {
            acc += p;
            if u < acc {
                return code;
            }
        }
        SEPARATION_CODES[0].0
    }
}

fn simulate_market(
    cfg: &SynthConfig,
    d: &MarketDraws,
    m: usize,
    plan: &MarketPlan,
    deflators: &BTreeMap<i32, f64>,
) -> BTreeMap<i32, Vec<RawWorkerRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + m as u64);
    let mut sim = MarketSim {
        cfg,
        rng,
        m,
        next_worker: 0,
    };
    let g = d.cohort[m];
    let mut ests: Vec<Establishment> = plan.establishments.clone();
    let (target, partner_slot) = match &plan.event {
        Some((t, Partner::Within(c))) => (Some(*t), Some(*c)),
        Some((t, Partner::Outside(e))) => {
            ests.push(e.clone());
            (Some(*t), Some(ests.len() - 1))
        }
        None => (None, None),
    };
    let mut rosters: Vec<Vec<Worker>> = vec![Vec::new(); ests.len()];
    let mut out: BTreeMap<i32, Vec<RawWorkerRow>> = BTreeMap::new();

    for (k, t) in cfg.years().enumerate() {
        let merged = matches!((g, target), (Some(g), Some(_)) if t > g);
        let mut shares: Vec<f64> = ests.iter().map(|e| e.share).collect();
        let mut active: Vec<bool> = vec![true; ests.len()];
        if let (Some(tg), Some(cp)) = (target, partner_slot) {
            if merged {
                shares[cp] += shares[tg];
                active[tg] = false;
            } else if cp >= plan.establishments.len() {
                active[cp] = false;
            }
        }
        let slots: Vec<usize> = (0..ests.len()).filter(|&s| active[s]).collect();
        let employment = d.log_employment[m][k].exp().round() as usize;
        let alloc = allocate(employment, &slots.iter().map(|&s| shares[s]).collect::<Vec<_>>());
        let theta = d.theta[m][k];
        let deflator = deflators[&t];
        let mut rows = Vec::new();

        let mut fresh: Vec<usize> = vec![0; ests.len()];
        if k > 0 {
            for r in rosters.iter_mut().flatten() {
                r.tenure += 12;
                r.age = r.age.saturating_add(1);
            }
            if let (Some(gy), Some(tg), Some(cp)) = (g, target, partner_slot) {
                if t == gy + 1 {
                    let mut leaving = std::mem::take(&mut rosters[tg]);
                    leaving.shuffle(&mut sim.rng);
                    let n = leaving.len();
                    let n_coal = ((cfg.mergers.coalition_share * n as f64).round() as usize).clamp(1, n);
                    let n_scatter = (cfg.mergers.scatter_share * n as f64).round() as usize;
                    let others: Vec<usize> = slots.iter().copied().filter(|&s| s != cp).collect();
                    for (i, mut w) in leaving.into_iter().enumerate() {
                        w.tenure = sim.rng.random_range(1..=11);
                        w.admission_type = 2;
                        if i < n_coal {
                            rosters[cp].push(w);
                            fresh[cp] += 1;
                        } else if i < n_coal + n_scatter.min(others.len()) {
                            let s = others[i - n_coal];
                            rosters[s].push(w);
                            fresh[s] += 1;
                        }
                    }
                }
            }
        }

        for (j, &s) in slots.iter().enumerate() {
            let mut roster = std::mem::take(&mut rosters[s]);
            let (mut arrivals, incumbents): (Vec<Worker>, Vec<Worker>) = {
                let split = roster.len() - fresh[s];
                let arrivals = roster.split_off(split);
                (arrivals, roster)
            };
            let ctx_est = ests[s].clone();
            let mut kept = Vec::with_capacity(alloc[j]);
            let mut leavers = Vec::new();
            for w in incumbents {
                if w.age > RETIREMENT_AGE || sim.rng.random_bool(cfg.turnover) {
                    leavers.push(w);
                } else {
                    kept.push(w);
                }
            }
            let room = alloc[j].saturating_sub(arrivals.len());
            while kept.len() > room {
                let i = sim.rng.random_range(0..kept.len());
                leavers.push(kept.swap_remove(i));
            }
            for mut w in leavers {
                w.tenure -= sim.rng.random_range(1..=11);
                let code = sim.separation_code();
                let lw = sim.log_wage(&w, theta);
                let race = sim.race_code(&w);
                let ctx = RowCtx {
                    year: t,
                    est: &ctx_est,
                    log_wage: lw,
                    deflator,
                };
                if w.tenure >= 0 {
                    rows.push(raw_row(&w, &ctx, Some(code), race));
                }
            }
            kept.append(&mut arrivals);
            while kept.len() < alloc[j] {
                let tenure = if k == 0 {
                    sim.rng.random_range(1..=120)
                } else {
                    sim.rng.random_range(1..=11)
                };
                let w = sim.hire(tenure, None);
                kept.push(w);
            }
            for w in &kept {
                let lw = sim.log_wage(w, theta);
                let race = sim.race_code(w);
                let ctx = RowCtx {
                    year: t,
                    est: &ctx_est,
                    log_wage: lw,
                    deflator,
                };
                rows.push(raw_row(w, &ctx, None, race));
            }
            rosters[s] = kept;
        }
        out.insert(t, rows);
    }
    out
}

/// Full synthetic extract: raw yearly files, establishment registry, lookup
/// tables, and the planted truth.
pub fn generate_panel(cfg: &SynthConfig) -> Result<SynthData> {
    let d = draw_markets(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let plans = plan_markets(cfg, &d, &mut rng);

    let deflators: BTreeMap<i32, f64> = cfg
        .years()
        .map(|t| (t, 1.05f64.powi(cfg.last_year - t)))
        .collect();
    let n_cz = cfg.n_markets.div_ceil(cfg.n_industries);
    let cz_map: BTreeMap<Id, Id> = (0..n_cz)
        .flat_map(|c| (0..2).map(move |k| (Id::new(city_code(c, k)), Id::new(cz_code(c)))))
        .collect();
    let tradable: BTreeSet<Id> = (0..cfg.n_industries.saturating_sub(cfg.nontradable_industries))
        .map(|i| Id::new(industry_code(i)))
        .collect();

    let mut raw: BTreeMap<i32, Vec<RawWorkerRow>> = cfg.years().map(|t| (t, Vec::new())).collect();
    for (m, plan) in plans.iter().enumerate() {
        for (t, rows) in simulate_market(cfg, &d, m, plan, &deflators) {
            raw.get_mut(&t).expect("year in range").extend(rows);
        }
    }
    add_noise_rows(cfg, &plans, &mut raw, &mut rng);

    let mut registry = Vec::new();
    let mut events = Vec::new();
    for (m, plan) in plans.iter().enumerate() {
        if let (Some((target, partner)), Some(g)) = (&plan.event, d.cohort[m]) {
            let t = &plan.establishments[*target];
            let (cp, within) = match partner {
                Partner::Within(c) => (plan.establishments[*c].firm.clone(), true),
                Partner::Outside(e) => (e.firm.clone(), false),
            };
            registry.push(RegistryRow {
                establishment_id: t.id.clone(),
                termination_reason: Some(if rng.random_bool(0.5) { 2 } else { 3 }),
                termination_date: Some(format!("{}-01-15", g + 1)),
            });
            events.push(TruthEvent {
                market: d.markets[m].clone(),
                event_year: g,
                target_establishment: t.id.clone(),
                target_firm: t.firm.clone(),
                counterpart_firm: cp,
                within_market: within,
            });
        }
    }
    // Unrelated closures that must not be read as mergers.
    for plan in plans.iter().step_by(7) {
        let e = &plan.establishments[0];
        if plan.event.as_ref().is_some_and(|(t, _)| *t == 0) {
            continue;
        }
        registry.push(RegistryRow {
            establishment_id: e.id.clone(),
            termination_reason: Some(1),
            termination_date: None,
        });
    }
    registry.sort_by(|a, b| a.establishment_id.cmp(&b.establishment_id));

    let truth = Truth {
        cohorts: d.markets.iter().cloned().zip(d.cohort.iter().copied()).collect(),
        events,
        effects: cfg.effects.clone(),
        covariate_betas: cfg.covariate_betas,
        theta: d
            .markets
            .iter()
            .zip(&d.theta)
            .flat_map(|(key, row)| cfg.years().zip(row).map(move |(t, v)| ((key.clone(), t), *v)))
            .collect(),
    };
    Ok(SynthData {
        raw,
        registry,
        cz_map,
        deflators,
        tradable,
        truth,
    })
}

fn add_noise_rows(
    cfg: &SynthConfig,
    plans: &[MarketPlan],
    raw: &mut BTreeMap<i32, Vec<RawWorkerRow>>,
    rng: &mut ChaCha8Rng,
) {
    let by_id: BTreeMap<&Id, &Establishment> = plans
        .iter()
        .flat_map(|p| p.establishments.iter())
        .map(|e| (&e.id, e))
        .collect();
    let mut stray = 0usize;
    for rows in raw.values_mut() {
        let open: BTreeSet<&Id> = rows
            .iter()
            .filter(|r| r.is_active())
            .filter_map(|r| r.establishment_id.as_ref())
            .collect();
        let all_ests: Vec<Establishment> = open
            .iter()
            .filter_map(|id| by_id.get(id).map(|e| (*e).clone()))
            .collect();
        let n_active = rows.iter().filter(|r| r.is_active()).count();
        let mut extra = Vec::new();
        for r in rows.iter().filter(|r| r.is_active()) {
            if rng.random_bool(cfg.noise.duplicate_rate) {
                let e = all_ests.choose(rng).expect("nonempty");
                if Some(&e.id) == r.establishment_id.as_ref() {
                    continue;
                }
                let mut dup = r.clone();
                dup.establishment_id = Some(e.id.clone());
                dup.city_code = Some(e.city.clone());
                dup.industry_code = Some(e.industry.clone());
                dup.monthly_earnings = r.monthly_earnings.map(|x| ((x * 0.5) * 100.0).round() / 100.0);
                dup.contract_hours = Some(20.0);
                extra.push(dup);
            }
        }
        let n_unmapped = (cfg.noise.unmapped_rate * n_active as f64).round() as usize;
        for _ in 0..n_unmapped {
            let e = all_ests.choose(rng).expect("nonempty");
            let base = rows[rng.random_range(0..rows.len())].clone();
            extra.push(RawWorkerRow {
                worker_id: Some(Id::new(format!("9{stray:010}"))),
                establishment_id: Some(e.id.clone()),
                city_code: Some(Id::new(UNMAPPED_CITY)),
                industry_code: Some(e.industry.clone()),
                ..base
            });
            stray += 1;
        }
        rows.extend(extra);
    }
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

/// Writes a raw yearly file, `;`-delimited with the raw column set.
pub fn write_raw(path: &Path, rows: &[RawWorkerRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(b';')
        .from_writer(std::io::BufWriter::new(f));
    w.write_record(RAW_COLUMNS)?;
    for r in rows {
        w.write_record([
            fmt_opt(&r.worker_id),
            fmt_opt(&r.establishment_id),
            fmt_opt(&r.city_code),
            fmt_opt(&r.industry_code),
            fmt_opt(&r.dec31_status),
            r.monthly_earnings.map(|x| format!("{x:.2}")).unwrap_or_default(),
            r.contract_hours.map(|x| format!("{x:.0}")).unwrap_or_default(),
            fmt_opt(&r.admission_date),
            fmt_opt(&r.admission_type),
            fmt_opt(&r.separation_code),
            r.tenure_months.map(|x| format!("{x:.1}")).unwrap_or_default(),
            fmt_opt(&r.race_code),
            fmt_opt(&r.sex),
            fmt_opt(&r.age),
            fmt_opt(&r.education_code),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const TRUTH_COLUMNS: [&str; 11] = [
    "record",
    "commuting_zone",
    "industry_code",
    "cohort",
    "target_establishment",
    "target_firm",
    "counterpart_firm",
    "within_market",
    "outcome",
    "lag",
    "value",
];

/// Lags written to the truth ledger for each planted effect path.
pub const TRUTH_LAGS: std::ops::RangeInclusive<i32> = -5..=5;

pub fn write_truth(path: &Path, truth: &Truth) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRUTH_COLUMNS)?;
    let blank = String::new;
    for (m, g) in &truth.cohorts {
        w.write_record([
            "cohort".into(),
            m.commuting_zone.to_string(),
            m.industry_code.to_string(),
            fmt_opt(g),
            blank(),
            blank(),
            blank(),
            blank(),
            blank(),
            blank(),
            blank(),
        ])?;
    }
    for e in &truth.events {
        w.write_record([
            "event".into(),
            e.market.commuting_zone.to_string(),
            e.market.industry_code.to_string(),
            e.event_year.to_string(),
            e.target_establishment.to_string(),
            e.target_firm.to_string(),
            e.counterpart_firm.to_string(),
            if e.within_market { "1" } else { "0" }.into(),
            blank(),
            blank(),
            blank(),
        ])?;
    }
    for p in &truth.effects {
        for l in TRUTH_LAGS {
            w.write_record([
                "effect".into(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                p.outcome.to_string(),
                l.to_string(),
                fmt_f64(p.at(l)),
            ])?;
        }
    }
    for (name, b) in crate::wage::COVARIATES.iter().zip(truth.covariate_betas) {
        w.write_record([
            "beta".into(),
            blank(),
            blank(),
            blank(),
            blank(),
            blank(),
            blank(),
            blank(),
            name.to_string(),
            blank(),
            fmt_f64(b),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes every input file of the pipeline into `dir`.
pub fn write_bundle(dir: &Path, data: &SynthData) -> Result<()> {
    for (year, rows) in &data.raw {
        write_raw(&dir.join(format!("rais_{year}.txt")), rows)?;
    }
    let mut w = csv_writer(&dir.join("registry.csv"))?;
    w.write_record(["establishment_id", "termination_reason", "termination_date"])?;
    for r in &data.registry {
        w.write_record([
            r.establishment_id.to_string(),
            fmt_opt(&r.termination_reason),
            r.termination_date.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    let mut w = csv_writer(&dir.join("cz_map.csv"))?;
    w.write_record(["city_code", "commuting_zone"])?;
    for (c, z) in &data.cz_map {
        w.write_record([c.as_str(), z.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    let mut w = csv_writer(&dir.join("deflators.csv"))?;
    w.write_record(["year", "factor"])?;
    for (y, f) in &data.deflators {
        w.write_record([y.to_string(), fmt_f64(*f)])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    let mut w = csv_writer(&dir.join("tradable.csv"))?;
    w.write_record(["industry_code"])?;
    for i in &data.tradable {
        w.write_record([i.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    write_truth(&dir.join("truth_ledger.csv"), &data.truth)
}
