//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, even when all pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use llmerge::pipeline::SUMMARY_COLUMNS;
use llmerge::stage::{sha256_file, Manifest, MANIFEST};
use llmerge_core::did::{
    compute_cells, event_study, percent_change, EstimatorConfig, EventStudy, OutcomePanel, Weighting,
    ATT_COLUMNS, CONTROL_SET_COLUMNS, STATUS_COLUMNS,
};
use llmerge_core::events::{identify_counterpart, identify_events, PanelIndex, RegistryRow, EVENT_COLUMNS};
use llmerge_core::inference::{bootstrap_curve, BootstrapRun, EVENT_STUDY_COLUMNS, OVERALL_COLUMNS};
use llmerge_core::io::JOB_COLUMNS;
use llmerge_core::markets::{
    classify_delta, equal_share_for_increment, equivalent_employers, event_delta, firm_employment, hhi,
    merger_increment, predicted_delta_hhi, EventClass, COHORT_COLUMNS, EVENT_CLASS_COLUMNS, HHI_COLUMNS,
    MONOPSONY_HHI, PANEL_COLUMNS, PERCENTILE_COLUMNS,
};
use llmerge_core::model::{JobRecord, MarketKey, Outcome};
use llmerge_core::synth::{generate_market_panel, CohortShare, EffectPath, SynthConfig};
use llmerge_core::wage::{absorb_fit, BETA_COLUMNS, THETA_COLUMNS};
use llmerge_oracle as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict, Duration);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 ------------------------------------------------------------------------

fn hhi_algebra() -> Verdict {
    let tol = 1e-9;
    let single = hhi(&[100.0]).map_err(|e| e.to_string())?;
    check((single - MONOPSONY_HHI).abs() < tol, || {
        format!("single employer HHI {single}")
    })?;
    for n in 1..=50usize {
        let shares = vec![100.0 / n as f64; n];
        let h = hhi(&shares).map_err(|e| e.to_string())?;
        check((h - 10_000.0 / n as f64).abs() < tol, || {
            format!("{n} equal firms: {h}")
        })?;
        let back = equivalent_employers(h).map_err(|e| e.to_string())?;
        check((back - n as f64).abs() < tol, || {
            format!("{n} equal firms back to {back}")
        })?;
        let jobs: Vec<oracle::OracleJob> = (0..n)
            .flat_map(|f| {
                (0..3).map(move |_| oracle::OracleJob {
                    firm: format!("f{f}"),
                    market: "m".into(),
                    year: 2010,
                })
            })
            .collect();
        let scan = oracle::hhi_by_scan(&jobs, "m", 2010).unwrap();
        check((scan - h).abs() < tol, || {
            format!("{n} equal firms vs scan {scan}")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let s1: f64 = rng.random_range(0.0..50.0);
        let s2: f64 = rng.random_range(0.0..50.0);
        let rest = 100.0 - s1 - s2;
        let before = s1 * s1 + s2 * s2 + rest * rest;
        let after = (s1 + s2).powi(2) + rest * rest;
        check((merger_increment(s1, s2) - (after - before)).abs() < tol, || {
            format!("increment({s1}, {s2})")
        })?;
        let s = rng.random_range(0.0..50.0);
        check(
            (equal_share_for_increment(merger_increment(s, s)) - s).abs() < tol,
            || format!("inverse at {s}"),
        )?;
    }
    let s = equal_share_for_increment(5.53);
    check((s - 1.662_829_0).abs() < 1e-7, || format!("sqrt(5.53/2) = {s}"))?;
    // Published shares for published increments; the increments are
    // themselves rounded, so agreement is to the second decimal.
    for (delta, share) in [(5.53, 1.67), (253.48, 11.25), (430.70, 14.67)] {
        let s = equal_share_for_increment(delta);
        check((s - share).abs() < 0.01, || {
            format!("{delta} -> {s:.4}, published {share}")
        })?;
        check((merger_increment(s, s) - delta).abs() < tol, || {
            format!("round trip at {delta}")
        })?;
    }
    Ok(format!("sqrt(5.53/2) = {s:.4}"))
}

// 2 ------------------------------------------------------------------------

fn random_panel(rng: &mut ChaCha8Rng) -> (OutcomePanel, oracle::OraclePanel) {
    let n = rng.random_range(2..=30);
    let years: Vec<i32> = (2000..2008).collect();
    let cohort: Vec<Option<i32>> = (0..n)
        .map(|_| {
            let k = rng.random_range(0..10);
            (k < 9).then_some(2001 + k)
        })
        .collect();
    let y: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            years
                .iter()
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let w: Vec<Vec<f64>> = (0..n)
        .map(|_| years.iter().map(|_| rng.random_range(0.1..10.0)).collect())
        .collect();
    let markets = (0..n).map(|m| MarketKey::new(format!("{m:05}"), "100")).collect();
    let panel = OutcomePanel::new(years.clone(), markets, cohort.clone(), y.clone(), w.clone()).unwrap();
    (panel, oracle::OraclePanel { years, cohort, y, w })
}

fn estimand_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut n_cells = 0;
    for i in 0..200 {
        let (panel, op) = random_panel(&mut rng);
        let zeta = (i % 2) as u32;
        let (weighting, ow) = match i % 3 {
            0 => (Weighting::Equal, oracle::OracleWeights::Equal),
            1 => (Weighting::EmploymentBase, oracle::OracleWeights::BaseYear),
            _ => (Weighting::EmploymentOutcome, oracle::OracleWeights::OutcomeYear),
        };
        let cfg = EstimatorConfig {
            zeta,
            window: 8,
            weighting,
            ..EstimatorConfig::default()
        };
        let cells = compute_cells(&panel, &cfg).map_err(|e| e.to_string())?;
        let grid: BTreeSet<(i32, i32)> = cells.iter().map(|c| c.g_t()).collect();
        for g in panel.cohorts() {
            let base = g - 1 - zeta as i32;
            if !op.years.contains(&base) {
                continue;
            }
            for &t in &op.years {
                if t != base && (t - g).abs() <= 8 {
                    check(grid.contains(&(g, t)), || {
                        format!("panel {i}: cell ({g}, {t}) missing")
                    })?;
                }
            }
        }
        for c in &cells {
            let (g, t) = c.g_t();
            let want = oracle::brute_force_att(&op, g, t, zeta as i32, ow);
            match (c.identified(), want) {
                (Some(a), Some(b)) => {
                    worst = worst.max((a.estimate - b).abs());
                    n_cells += 1;
                }
                (None, None) => {}
                (a, b) => {
                    return Err(format!(
                        "panel {i}, cell ({g}, {t}): identified {} vs oracle {}",
                        a.is_some(),
                        b.is_some()
                    ))
                }
            }
        }
    }
    check(worst <= 1e-12, || format!("max abs diff {worst:e}"))?;
    Ok(format!("{n_cells} cells, max abs diff {worst:.1e}"))
}

// 3, 4 ---------------------------------------------------------------------

fn four_cohorts(seed: u64, effect: EffectPath) -> SynthConfig {
    SynthConfig {
        seed,
        n_markets: 200,
        cohorts: [2008, 2010, 2012, 2015]
            .into_iter()
            .map(|year| CohortShare { year, share: 0.25 })
            .collect(),
        effects: vec![effect],
        ..SynthConfig::default()
    }
}

/// Mean event-study coefficient by lag over `reps` replications.
fn mean_event_study(reps: u64, zeta: u32, effect: &EffectPath) -> Result<BTreeMap<i32, f64>, String> {
    let cfg = EstimatorConfig {
        zeta,
        ..EstimatorConfig::default()
    };
    let mut sum: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for rep in 0..reps {
        let panel =
            generate_market_panel(&four_cohorts(1000 + rep, effect.clone())).map_err(|e| e.to_string())?;
        let cells = compute_cells(&panel, &cfg).map_err(|e| e.to_string())?;
        let es = event_study(&panel, &cells, &cfg);
        for (l, a) in &es.lags {
            let e = sum.entry(*l).or_default();
            e.0 += a.beta;
            e.1 += 1;
        }
    }
    Ok(sum.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect())
}

fn known_truth_recovery() -> Verdict {
    let effect = EffectPath {
        outcome: Outcome::Theta,
        post: -0.10,
        ..EffectPath::default()
    };
    let means = mean_event_study(100, 0, &effect)?;
    let mut worst = 0.0f64;
    for (&l, &b) in &means {
        let bias = b - effect.at(l);
        worst = worst.max(bias.abs());
        check(bias.abs() < 0.01, || {
            format!("lag {l}: mean {b:.4}, bias {bias:.4}")
        })?;
    }
    check(
        means.keys().any(|&l| l >= 0) && means.keys().any(|&l| l < -1),
        || format!("lags present: {:?}", means.keys().collect::<Vec<_>>()),
    )?;
    Ok(format!(
        "lags {:?}, max |bias| {worst:.4}",
        means.keys().collect::<Vec<_>>()
    ))
}

fn anticipation_semantics() -> Verdict {
    let effect = EffectPath {
        outcome: Outcome::Theta,
        post: -0.10,
        anticipation: -0.05,
        ..EffectPath::default()
    };
    let z0 = mean_event_study(100, 0, &effect)?;
    let z1 = mean_event_study(100, 1, &effect)?;
    // With no anticipation window, the contaminated base year shows up as a
    // jump of the anticipation size between the last two leads.
    let jump = z0[&-1] - z0[&-2];
    check((jump - -0.05).abs() <= 0.02, || {
        format!("zeta=0 lead jump {jump:.4}")
    })?;
    let lead2 = z1[&-2];
    check(lead2.abs() <= 0.02, || format!("zeta=1 lead -2 at {lead2:.4}"))?;
    let lead1 = z1[&-1];
    check((lead1 - -0.05).abs() <= 0.02, || {
        format!("zeta=1 lead -1 at {lead1:.4}")
    })?;
    for (&l, &b) in z1.range(0..) {
        check((b - -0.10).abs() <= 0.02, || format!("zeta=1 lag {l}: {b:.4}"))?;
    }
    let post0 = z0[&0];
    Ok(format!(
        "zeta=0: lead jump {jump:.4}, lag 0 {post0:.4}; zeta=1: lead -1 {lead1:.4}, lag 0 {:.4}",
        z1[&0]
    ))
}

// 5 ------------------------------------------------------------------------

fn wage_adjustment() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut worst_zero = 0.0f64;
    for i in 0..100 {
        let n_groups = rng.random_range(1..=50);
        let k = rng.random_range(1..=6);
        let mut group = Vec::new();
        for g in 0..n_groups {
            for _ in 0..rng.random_range(1..=8) {
                group.push(g);
            }
        }
        while group.len() < n_groups + k + 5 {
            group.push(rng.random_range(0..n_groups));
        }
        let n = group.len();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let theta: Vec<f64> = (0..n_groups).map(|_| rng.random_range(8.0..11.0)).collect();
        let beta: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let signal: Vec<f64> = (0..n)
            .map(|r| theta[group[r]] + x[r].iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
            .collect();

        let exact = absorb_fit(&group, n_groups, &signal, &x).map_err(|e| e.to_string())?;
        for (g, t) in exact.theta.iter().enumerate() {
            worst_zero = worst_zero.max((t - theta[g]).abs());
        }
        for (b, want) in exact.beta.iter().zip(&beta) {
            let b = b.ok_or_else(|| format!("panel {i}: column dropped"))?;
            worst_zero = worst_zero.max((b - want).abs());
        }

        let y: Vec<f64> = signal
            .iter()
            .map(|s| s + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fit = absorb_fit(&group, n_groups, &y, &x).map_err(|e| e.to_string())?;
        let (dt, db) = oracle::dense_dummy_ls(&group, n_groups, &y, &x);
        for (a, b) in fit.theta.iter().zip(&dt) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in fit.beta.iter().zip(&db) {
            worst = worst.max((a.unwrap() - b).abs());
        }
    }
    check(worst <= 1e-8, || format!("absorbed vs dense: {worst:e}"))?;
    check(worst_zero <= 1e-8, || {
        format!("zero-noise recovery: {worst_zero:e}")
    })?;
    Ok(format!("vs dense {worst:.1e}, zero-noise {worst_zero:.1e}"))
}

// 6 ------------------------------------------------------------------------

fn band_contains(es: &EventStudy, run: &BootstrapRun) -> Result<(bool, bool), String> {
    let curve = bootstrap_curve(es, run).map_err(|e| e.to_string())?;
    let nested = curve
        .lags
        .values()
        .all(|l| l.band.0 <= l.pointwise.0 && l.pointwise.1 <= l.band.1);
    let at0 = curve.lags.get(&0).ok_or("lag 0 not identified")?;
    Ok((at0.pointwise.0 <= 0.0 && 0.0 <= at0.pointwise.1, nested))
}

fn bootstrap_coverage() -> Verdict {
    let cfg = EstimatorConfig::default();
    let reps = 300;
    let mut covered = 0;
    for rep in 0..reps {
        let synth = four_cohorts(5000 + rep, EffectPath::default());
        let panel = generate_market_panel(&synth).map_err(|e| e.to_string())?;
        let cells = compute_cells(&panel, &cfg).map_err(|e| e.to_string())?;
        let es = event_study(&panel, &cells, &cfg);
        let run = BootstrapRun {
            draws: 999,
            seed: rep,
            ..BootstrapRun::default()
        };
        let (hit, nested) = band_contains(&es, &run)?;
        check(nested, || {
            format!("replication {rep}: band does not contain pointwise interval")
        })?;
        covered += usize::from(hit);
    }
    let rate = 100.0 * covered as f64 / reps as f64;
    check((90.0..=98.0).contains(&rate), || format!("coverage {rate:.1}%"))?;
    Ok(format!("coverage {rate:.1}% over {reps} replications"))
}

// 7 ------------------------------------------------------------------------

fn job(worker: usize, firm: &str, year: i32, cz: &str) -> JobRecord {
    JobRecord {
        worker_id: format!("{worker:011}").into(),
        firm_id: firm.into(),
        establishment_id: format!("{firm}000100").into(),
        year,
        city_code: "3100000".into(),
        commuting_zone: cz.into(),
        industry_code: "151".into(),
        tradable: true,
        log_earnings: 9.0,
        tenure_months: 24,
        admission_type: 1,
        separation_code: None,
        active_dec31: true,
        age: 35,
        female: false,
        white: true,
        college: false,
        highschool: false,
    }
}

const TARGET: &str = "10000000";
const YEAR: i32 = 2010;

/// A target with `n` workers; `dest[i]` is worker i's firm the next year.
/// Candidate firms listed in `home` also employ in the target's market.
fn flow_scenario(dest: &[Option<&str>], home: &BTreeSet<&str>, candidates: &[&str]) -> Vec<JobRecord> {
    let mut jobs = Vec::new();
    let mut wid = 0;
    for (i, d) in dest.iter().enumerate() {
        jobs.push(job(i, TARGET, YEAR - 1, "11000"));
        jobs.push(job(i, TARGET, YEAR, "11000"));
        if let Some(f) = d {
            jobs.push(job(
                i,
                f,
                YEAR + 1,
                if home.contains(f) { "11000" } else { "11001" },
            ));
        }
        wid = i + 1;
    }
    for (k, f) in candidates.iter().enumerate() {
        let cz = if home.contains(f) { "11000" } else { "11001" };
        for _ in 0..=k {
            for y in YEAR - 1..=YEAR + 1 {
                jobs.push(job(wid, f, y, cz));
            }
            wid += 1;
        }
    }
    jobs
}

fn merger_identification() -> Verdict {
    let candidates = ["20000000", "20000001", "20000002", "20000003"];
    type Scenario<'a> = (String, Vec<Option<&'a str>>, BTreeSet<&'a str>);
    let mut scenarios: Vec<Scenario> = vec![
        (
            "dominant".into(),
            [
                vec![Some(candidates[1]); 6],
                vec![Some(candidates[2]); 2],
                vec![None; 2],
            ]
            .concat(),
            BTreeSet::from([candidates[1]]),
        ),
        (
            "tie".into(),
            [vec![Some(candidates[2]); 4], vec![Some(candidates[0]); 4]].concat(),
            BTreeSet::new(),
        ),
        ("zero re-employment".into(), vec![None; 5], BTreeSet::new()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for s in 0..97 {
        let n = rng.random_range(1..=12);
        let dest = (0..n)
            .map(|_| {
                let k = rng.random_range(0..=candidates.len());
                candidates.get(k).copied()
            })
            .collect();
        let home = candidates
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.5))
            .collect();
        scenarios.push((format!("random {s}"), dest, home));
    }

    let registry = vec![RegistryRow {
        establishment_id: format!("{TARGET}000100").into(),
        termination_reason: Some(2),
        termination_date: None,
    }];
    let (mut n_within, mut n_out, mut n_ties) = (0, 0, 0);
    for (name, dest, home) in &scenarios {
        let jobs = flow_scenario(dest, home, &candidates);
        let destinations: Vec<String> = dest.iter().flatten().map(|f| f.to_string()).collect();
        let want = oracle::modal_destination(&destinations);

        let index = PanelIndex::new(&jobs);
        let got = identify_counterpart(&format!("{TARGET}000100"), YEAR, &index);
        match &want {
            Some((firm, count, tie)) => {
                check(
                    got.firm.as_ref().map(|f| f.as_str()) == Some(firm.as_str()),
                    || format!("{name}: counterpart {:?} vs {firm}", got.firm),
                )?;
                check(got.n_to_counterpart == *count && got.tie == *tie, || {
                    format!("{name}: count/tie")
                })?;
                n_ties += usize::from(*tie);
            }
            None => check(got.firm.is_none(), || format!("{name}: expected no counterpart"))?,
        }

        let found = identify_events(&registry, &jobs);
        check(found.events.len() == 1, || {
            format!("{name}: {} events", found.events.len())
        })?;
        let event = &found.events[0];
        check(event.event_year == YEAR, || {
            format!("{name}: event year {}", event.event_year)
        })?;
        let Some((firm, _, _)) = want else {
            check(event.counterpart_firm.is_none(), || {
                format!("{name}: phantom counterpart")
            })?;
            continue;
        };
        let within = home.contains(firm.as_str());
        check(event.within_market == Some(within), || {
            format!("{name}: within_market")
        })?;

        let counts = firm_employment(&jobs);
        let delta = event_delta(&predicted_delta_hhi(event, &counts).ok_or("no prediction")?);
        let market = MarketKey::new("11000", "151");
        let cell: Vec<(String, u64)> = counts[&(market, YEAR - 1)]
            .iter()
            .map(|(f, n)| (f.to_string(), *n))
            .collect();
        let want_delta = oracle::simulated_hhi_change(&cell, &[TARGET.to_string(), firm.clone()]);
        check((delta - want_delta).abs() < 1e-9, || {
            format!("{name}: delta {delta} vs {want_delta}")
        })?;
        let out = classify_delta(delta, 100.0) == EventClass::OutOfMarket;
        check(out == (delta == 0.0) && out == !within, || {
            format!("{name}: delta {delta}, within {within}, out-of-market {out}")
        })?;
        if within {
            n_within += 1;
        } else {
            n_out += 1;
        }
    }
    Ok(format!(
        "{} scenarios: {n_within} within-market, {n_out} out-of-market, {n_ties} ties",
        scenarios.len()
    ))
}

// 8 ------------------------------------------------------------------------

fn percent_conversion() -> Verdict {
    let a = -percent_change(-0.0702);
    let b = -percent_change(-0.2622);
    check((a - 6.78).abs() < 0.01, || format!("-0.0702 -> {a:.4}% decline"))?;
    check((b - 23.07).abs() < 0.01, || format!("-0.2622 -> {b:.4}% decline"))?;
    Ok(format!("{a:.2}% and {b:.2}% declines"))
}

// 9, 10 --------------------------------------------------------------------

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/sample.toml")
}

fn run_cli(dir: &Path, threads: usize) -> Result<Duration, String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_llmerge"))
        .arg("all")
        .arg("--config")
        .arg(scenario())
        .arg("--data-root")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--threads")
        .arg(threads.to_string())
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(out.status.success(), || {
        format!(
            "exit {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    Ok(elapsed)
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let runs: Vec<(tempfile::TempDir, usize)> = [1, 8, 1]
        .into_iter()
        .map(|t| (tempfile::tempdir().unwrap(), t))
        .collect();
    for (dir, t) in &runs {
        run_cli(dir.path(), *t)?;
    }
    let first = tree(runs[0].0.path());
    for (dir, t) in &runs[1..] {
        let other = tree(dir.path());
        check(first.keys().eq(other.keys()), || {
            format!("threads {t}: file sets differ")
        })?;
        for (p, bytes) in &first {
            check(other[p] == *bytes, || {
                format!("threads {t}: {} differs", p.display())
            })?;
        }
    }
    Ok(format!(
        "{} files identical across 3 runs (threads 1, 8, 1)",
        first.len()
    ))
}

fn header(path: &Path) -> Result<Vec<String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let line = text.lines().next().unwrap_or_default();
    Ok(line.split(',').map(str::to_owned).collect())
}

fn end_to_end() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let elapsed = run_cli(dir.path(), 0)?;
    let out = dir.path().join("out");

    let cfg = llmerge::config::RunConfig::load(&scenario()).map_err(|e| e.to_string())?;
    let mut expected: Vec<(String, &[&str])> = vec![
        ("events/events.csv".into(), &EVENT_COLUMNS),
        ("markets/hhi.csv".into(), &HHI_COLUMNS),
        ("markets/event_classes.csv".into(), &EVENT_CLASS_COLUMNS),
        ("markets/delta_hhi_percentiles.csv".into(), &PERCENTILE_COLUMNS),
        ("markets/cohorts.csv".into(), &COHORT_COLUMNS),
        ("markets/cohort_status.csv".into(), &STATUS_COLUMNS),
        ("adjust/theta.csv".into(), &THETA_COLUMNS),
        ("adjust/beta.csv".into(), &BETA_COLUMNS),
        ("estimate/summary.csv".into(), &SUMMARY_COLUMNS),
    ];
    for y in cfg.ingest.first_year..=cfg.ingest.last_year {
        expected.push((format!("ingest/jobs_{y}.csv"), &JOB_COLUMNS));
        expected.push((format!("ingest/separations_{y}.csv"), &JOB_COLUMNS));
    }
    let mut svgs = vec!["report/overall.svg".to_owned()];
    for &split in &cfg.estimate.splits {
        for &subpop in &cfg.estimate.subpops {
            expected.push((format!("markets/panel_{split}_{subpop}.csv"), &PANEL_COLUMNS));
            for &o in &cfg.estimate.outcomes {
                let tag = llmerge::pipeline::spec_tag(o, split, subpop);
                expected.push((format!("estimate/att_gt_{tag}.csv"), &ATT_COLUMNS));
                expected.push((format!("estimate/control_sets_{tag}.csv"), &CONTROL_SET_COLUMNS));
                expected.push((format!("estimate/event_study_{tag}.csv"), &EVENT_STUDY_COLUMNS));
                expected.push((format!("estimate/overall_{tag}.csv"), &OVERALL_COLUMNS));
                svgs.push(format!("report/event_study_{tag}.svg"));
            }
        }
    }
    for (file, cols) in &expected {
        let got = header(&out.join(file))?;
        check(
            got == cols.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            || format!("{file}: header {got:?}"),
        )?;
    }
    for f in &svgs {
        let text = fs::read_to_string(out.join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(
            text.starts_with("<svg") && text.trim_end().ends_with("</svg>"),
            || format!("{f} malformed"),
        )?;
    }
    for f in ["ingest/ingest_report.json", "events/events_report.json"] {
        let text = fs::read_to_string(out.join(f)).map_err(|e| format!("{f}: {e}"))?;
        serde_json::from_str::<serde_json::Value>(&text).map_err(|e| format!("{f}: {e}"))?;
    }
    let md = fs::read_to_string(out.join("report/report.md")).map_err(|e| e.to_string())?;
    check(md.contains("draws") && md.contains("seed"), || {
        "report lacks bootstrap metadata".into()
    })?;

    let mut n_files = 0;
    for stage in llmerge::pipeline::STAGES {
        let d = out.join(stage);
        let text = fs::read_to_string(d.join(MANIFEST)).map_err(|e| format!("{stage}: {e}"))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| format!("{stage}: {e}"))?;
        let on_disk: BTreeSet<String> = fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n != MANIFEST)
            .collect();
        check(
            m.outputs.keys().cloned().collect::<BTreeSet<_>>() == on_disk,
            || format!("{stage}: manifest does not list the stage's files"),
        )?;
        for (name, sha) in &m.outputs {
            check(
                sha256_file(&d.join(name)).map_err(|e| e.to_string())? == *sha,
                || format!("{stage}/{name}: checksum mismatch"),
            )?;
        }
        n_files += on_disk.len();
    }
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{n_files} artifacts in {:.1} s", elapsed.as_secs_f64()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 HHI algebra", hhi_algebra, Duration::from_secs(1)),
        (
            "2 estimand equivalence",
            estimand_equivalence,
            Duration::from_secs(30),
        ),
        (
            "3 known-truth recovery",
            known_truth_recovery,
            Duration::from_secs(300),
        ),
        (
            "4 anticipation semantics",
            anticipation_semantics,
            Duration::from_secs(300),
        ),
        ("5 wage adjustment", wage_adjustment, Duration::from_secs(60)),
        (
            "6 bootstrap coverage",
            bootstrap_coverage,
            Duration::from_secs(1200),
        ),
        (
            "7 merger identification",
            merger_identification,
            Duration::from_secs(60),
        ),
        ("8 percent conversion", percent_conversion, Duration::from_secs(1)),
        ("9 determinism", determinism, Duration::from_secs(600)),
        ("10 end-to-end CLI", end_to_end, Duration::from_secs(120)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = f().and_then(|msg| {
            let t = start.elapsed();
            check(t <= budget, || format!("{msg}; over budget: {t:?} > {budget:?}")).map(|_| msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS  criterion {name} ({secs:.2} s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name} ({secs:.2} s): {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
