use std::collections::{BTreeMap, BTreeSet};

use llmerge_core::did::{compute_cells, event_study, EstimatorConfig, OutcomePanel, Weighting};
use llmerge_core::events::identify_events;
use llmerge_core::ingest::{ingest_files, IngestConfig};
use llmerge_core::markets::{
    assign_cohorts, build_market_panel, event_delta, firm_employment, merging_roster, predicted_delta_hhi,
    PanelSpec,
};
use llmerge_core::model::{JobRecord, Outcome, YearWindow};
use llmerge_core::synth::{generate_panel, write_bundle, CohortShare, EffectPath, SynthConfig};
use llmerge_core::wage::fit_years;
use llmerge_core::{Split, Subpop};

fn scenario() -> SynthConfig {
    SynthConfig {
        seed: 11,
        n_markets: 60,
        n_industries: 6,
        first_year: 2004,
        last_year: 2014,
        cohorts: vec![
            CohortShare {
                year: 2008,
                share: 0.2,
            },
            CohortShare {
                year: 2010,
                share: 0.2,
            },
            CohortShare {
                year: 2012,
                share: 0.2,
            },
        ],
        effects: vec![EffectPath {
            outcome: Outcome::Theta,
            post: -0.1,
            ..EffectPath::default()
        }],
        ..SynthConfig::default()
    }
}

struct Ingested {
    jobs: Vec<JobRecord>,
    separations: Vec<JobRecord>,
}

fn ingest(cfg: &SynthConfig, dir: &std::path::Path) -> (llmerge_core::synth::SynthData, Ingested) {
    let data = generate_panel(cfg).unwrap();
    write_bundle(dir, &data).unwrap();
    let files: Vec<_> = cfg
        .years()
        .map(|y| (y, dir.join(format!("rais_{y}.txt"))))
        .collect();
    let icfg = IngestConfig {
        delimiter: b';',
        encoding: Default::default(),
        window: YearWindow::new(cfg.first_year, cfg.last_year).unwrap(),
        cz_map: data.cz_map.clone(),
        deflators: data.deflators.clone(),
        tradable: Some(data.tradable.clone()),
    };
    let out = ingest_files(&files, &icfg).unwrap();
    let mut jobs = Vec::new();
    let mut separations = Vec::new();
    for y in out.years {
        jobs.extend(y.jobs);
        separations.extend(y.separations);
    }
    (data, Ingested { jobs, separations })
}

#[test]
fn events_recover_planted_mergers() {
    let cfg = scenario();
    let dir = tempfile::tempdir().unwrap();
    let (data, ing) = ingest(&cfg, dir.path());
    let found = identify_events(&data.registry, &ing.jobs);
    assert!(found.discarded.is_empty());
    let by_target: BTreeMap<_, _> = found
        .events
        .iter()
        .flat_map(|e| e.target_establishments.iter().map(move |t| (t.clone(), e)))
        .collect();
    assert_eq!(by_target.len(), data.truth.events.len());
    for t in &data.truth.events {
        let e = by_target[&t.target_establishment];
        assert_eq!(e.event_year, t.event_year, "{t:?}");
        assert_eq!(e.counterpart_firm.as_ref(), Some(&t.counterpart_firm), "{t:?}");
        assert_eq!(e.within_market, Some(t.within_market), "{t:?}");
        assert_eq!(e.markets, BTreeSet::from([t.market.clone()]));
    }
}

#[test]
fn wage_index_recovers_planted_effect() {
    let cfg = scenario();
    let dir = tempfile::tempdir().unwrap();
    let (data, ing) = ingest(&cfg, dir.path());
    let found = identify_events(&data.registry, &ing.jobs);
    let universe: BTreeSet<_> = ing.jobs.iter().map(JobRecord::market).collect();
    let cohorts = assign_cohorts(&found.events, &universe);
    for (m, g) in cohorts.iter() {
        assert_eq!(Some(&g), data.truth.cohorts.get(m));
    }
    let roster = merging_roster(&found.events);
    let spec = PanelSpec {
        window: YearWindow::new(cfg.first_year, cfg.last_year).unwrap(),
        split: Split::All,
        subpop: Subpop::All,
        tradable_only: false,
    };
    let mut panel = build_market_panel(&ing.jobs, &ing.separations, &cohorts, &roster, &spec);
    let refs: Vec<&JobRecord> = ing.jobs.iter().collect();
    let fits = fit_years(&refs).unwrap();
    for f in &fits {
        for (j, b) in f.beta.iter().enumerate() {
            let want = data.truth.covariate_betas[j];
            let tol = if j >= 4 { 0.01 } else { 0.05 };
            assert!(
                (b.unwrap() - want).abs() < tol,
                "{} beta {j}: {b:?} vs {want}",
                f.year
            );
        }
    }
    let theta: BTreeMap<_, _> = fits
        .iter()
        .flat_map(|f| f.theta.iter().map(move |(m, v)| ((m.clone(), f.year), *v)))
        .collect();
    for r in &mut panel.rows {
        r.theta = theta.get(&(r.market.clone(), r.year)).copied();
    }
    let p = OutcomePanel::from_rows(&panel.rows, Outcome::Theta).unwrap();
    let ecfg = EstimatorConfig {
        weighting: Weighting::Equal,
        ..EstimatorConfig::default()
    };
    let cells = compute_cells(&p, &ecfg).unwrap();
    let es = event_study(&p, &cells, &ecfg);
    // Worker noise averages out only partially in 60 markets; look for the sign and rough size.
    let post: f64 = (0..=2).map(|l| es.lags[&l].beta).sum::<f64>() / 3.0;
    assert!((post + 0.1).abs() < 0.05, "post mean {post}");
}

#[test]
fn predicted_concentration_separates_deal_types() {
    let cfg = scenario();
    let dir = tempfile::tempdir().unwrap();
    let (data, ing) = ingest(&cfg, dir.path());
    let found = identify_events(&data.registry, &ing.jobs);
    let counts = firm_employment(&ing.jobs);
    let within: BTreeMap<_, _> = data
        .truth
        .events
        .iter()
        .map(|t| (t.target_establishment.clone(), t.within_market))
        .collect();
    for e in &found.events {
        let delta = event_delta(&predicted_delta_hhi(e, &counts).unwrap());
        let planted = within[e.target_establishments.first().unwrap()];
        assert_eq!(delta > 0.0, planted, "{e:?}");
        if !planted {
            assert_eq!(delta, 0.0);
        }
    }
}
