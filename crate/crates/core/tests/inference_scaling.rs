use llmerge_core::did::{compute_cells, event_study, overall, EstimatorConfig};
use llmerge_core::inference::{bootstrap_curve, bootstrap_scalar, BootstrapRun, IntervalKind};
use llmerge_core::synth::{generate_market_panel, CohortShare, SynthConfig};

fn null_config(seed: u64, n_markets: usize) -> SynthConfig {
    SynthConfig {
        seed,
        n_markets,
        cohorts: [2008, 2010, 2012, 2015]
            .into_iter()
            .map(|year| CohortShare { year, share: 0.25 })
            .collect(),
        ..SynthConfig::default()
    }
}

/// Mean bootstrap standard error of the lag-0 coefficient and the overall effect.
fn mean_se(n_markets: usize) -> (f64, f64) {
    let cfg = EstimatorConfig::default();
    let reps = 20;
    let (mut curve_se, mut scalar_se) = (0.0, 0.0);
    for rep in 0..reps {
        let panel = generate_market_panel(&null_config(rep, n_markets)).unwrap();
        let cells = compute_cells(&panel, &cfg).unwrap();
        let es = event_study(&panel, &cells, &cfg);
        let run = BootstrapRun {
            draws: 499,
            seed: rep,
            ..BootstrapRun::default()
        };
        curve_se += bootstrap_curve(&es, &run).unwrap().lags[&0].se;
        let mut o = overall(&es, &cfg.overall_lags).unwrap();
        bootstrap_scalar(&mut o, &run, IntervalKind::Symmetric).unwrap();
        scalar_se += o.se.unwrap();
    }
    (curve_se / reps as f64, scalar_se / reps as f64)
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn standard_errors_shrink_at_root_n() {
    let sizes = [100usize, 200, 400, 800];
    let mut curve = Vec::new();
    let mut scalar = Vec::new();
    for &m in &sizes {
        let (c, s) = mean_se(m);
        curve.push(c.ln());
        scalar.push(s.ln());
    }
    let logm: Vec<f64> = sizes.iter().map(|&m| (m as f64).ln()).collect();
    let b0 = slope(&logm, &curve);
    let b1 = slope(&logm, &scalar);
    assert!((b0 + 0.5).abs() < 0.15, "lag-0 slope {b0}");
    assert!((b1 + 0.5).abs() < 0.15, "overall slope {b1}");
}
