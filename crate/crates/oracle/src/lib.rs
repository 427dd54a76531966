//! Brute-force reference computations.
//!
//! Everything here is written as literally as possible, on plain vectors and
//! strings, and shares no code with `llmerge-core`. Tests compare the
//! production routines against these.

#![allow(clippy::needless_range_loop, clippy::manual_memcpy)]

/// One Dec-31 job for [`hhi_by_scan`].
#[derive(Debug, Clone)]
pub struct OracleJob {
    pub firm: String,
    pub market: String,
    pub year: i32,
}

/// HHI of `market` in `year` by counting every firm with a full scan per firm.
pub fn hhi_by_scan(jobs: &[OracleJob], market: &str, year: i32) -> Option<f64> {
    let in_cell: Vec<&OracleJob> = jobs
        .iter()
        .filter(|j| j.market == market && j.year == year)
        .collect();
    if in_cell.is_empty() {
        return None;
    }
    let mut firms: Vec<&str> = Vec::new();
    for j in &in_cell {
        if !firms.contains(&j.firm.as_str()) {
            firms.push(&j.firm);
        }
    }
    let total = in_cell.len() as f64;
    let mut h = 0.0;
    for f in firms {
        let n = in_cell.iter().filter(|j| j.firm == f).count() as f64;
        let s = 100.0 * n / total;
        h += s * s;
    }
    Some(h)
}

/// Simulated HHI with the firms in `group` counted as one employer, minus the
/// observed HHI. `counts` are head counts per firm.
pub fn simulated_hhi_change(counts: &[(String, u64)], group: &[String]) -> f64 {
    let total: u64 = counts.iter().map(|(_, n)| n).sum();
    let share = |n: u64| 100.0 * n as f64 / total as f64;
    let observed: f64 = counts.iter().map(|(_, n)| share(*n).powi(2)).sum();
    let mut combined = 0u64;
    let mut simulated = 0.0;
    for (f, n) in counts {
        if group.contains(f) {
            combined += n;
        } else {
            simulated += share(*n).powi(2);
        }
    }
    if combined > 0 {
        simulated += share(combined).powi(2);
    }
    simulated - observed
}

/// The firm receiving the most workers, smallest id on ties, by enumerating
/// every candidate and counting with a linear scan. `destinations` holds the
/// next-year firm of each departing worker.
pub fn modal_destination(destinations: &[String]) -> Option<(String, usize, bool)> {
    let mut best: Option<(String, usize)> = None;
    let mut tie = false;
    let mut candidates: Vec<String> = destinations.to_vec();
    candidates.sort();
    candidates.dedup();
    for c in candidates {
        let n = destinations.iter().filter(|d| **d == c).count();
        match &best {
            None => best = Some((c, n)),
            Some((_, b)) if n > *b => {
                best = Some((c, n));
                tie = false;
            }
            Some((_, b)) if n == *b => tie = true,
            _ => {}
        }
    }
    best.map(|(f, n)| (f, n, tie))
}

/// Lower empirical quantile by enumeration: the smallest observed value `x`
/// with at least a fraction `p` of the sample `<= x`.
pub fn lower_quantile_by_enumeration(values: &[f64], p: f64) -> f64 {
    let n = values.len() as f64;
    let mut best = f64::INFINITY;
    for &x in values {
        let below = values.iter().filter(|v| **v <= x).count() as f64;
        // Same rounding guard as the exact fraction comparison k/n >= p.
        if below / n >= p - 1e-12 && x < best {
            best = x;
        }
    }
    best
}

/// Balanced market × year outcome table.
#[derive(Debug, Clone)]
pub struct OraclePanel {
    pub years: Vec<i32>,
    /// First treatment year per market, `None` for never treated.
    pub cohort: Vec<Option<i32>>,
    /// `y[m][k]` is the outcome of market `m` in `years[k]`.
    pub y: Vec<Vec<f64>>,
    /// `w[m][k]` is the employment weight of market `m` in `years[k]`.
    pub w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleWeights {
    Equal,
    BaseYear,
    OutcomeYear,
}

fn year_pos(p: &OraclePanel, year: i32) -> Option<usize> {
    p.years.iter().position(|y| *y == year)
}

pub fn treated_set(p: &OraclePanel, g: i32) -> Vec<usize> {
    let mut out = Vec::new();
    for m in 0..p.cohort.len() {
        if p.cohort[m] == Some(g) {
            out.push(m);
        }
    }
    out
}

/// Eventually treated markets, other than cohort `g`, still untreated through
/// year `max(t, base) + zeta`.
pub fn control_set(p: &OraclePanel, g: i32, t: i32, zeta: i32) -> Vec<usize> {
    let base = g - 1 - zeta;
    let horizon = if t > base { t } else { base };
    let mut out = Vec::new();
    for m in 0..p.cohort.len() {
        if let Some(gm) = p.cohort[m] {
            if gm != g && gm > horizon + zeta {
                out.push(m);
            }
        }
    }
    out
}

/// Group-time ATT as the difference of four (weighted) means:
/// treated at t, treated at base, control at t, control at base.
pub fn brute_force_att(p: &OraclePanel, g: i32, t: i32, zeta: i32, weights: OracleWeights) -> Option<f64> {
    let base = g - 1 - zeta;
    let kt = year_pos(p, t)?;
    let kb = year_pos(p, base)?;
    let treated = treated_set(p, g);
    let control = control_set(p, g, t, zeta);
    if treated.is_empty() || control.is_empty() {
        return None;
    }
    let weight = |m: usize| match weights {
        OracleWeights::Equal => 1.0,
        OracleWeights::BaseYear => p.w[m][kb],
        OracleWeights::OutcomeYear => p.w[m][kt],
    };
    let mean = |set: &[usize], k: usize| {
        let mut num = 0.0;
        let mut den = 0.0;
        for &m in set {
            num += weight(m) * p.y[m][k];
            den += weight(m);
        }
        num / den
    };
    Some((mean(&treated, kt) - mean(&treated, kb)) - (mean(&control, kt) - mean(&control, kb)))
}

/// Least squares of `y` on market dummies plus covariates `x`, solved with a
/// textbook Householder QR of the full dummy-variable design.
///
/// Returns `(theta per market, beta)`.
pub fn dense_dummy_ls(market: &[usize], n_markets: usize, y: &[f64], x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let k = x.first().map_or(0, Vec::len);
    let p = n_markets + k;
    // Column-major design matrix.
    let mut a = vec![vec![0.0; n]; p];
    for i in 0..n {
        a[market[i]][i] = 1.0;
        for j in 0..k {
            a[n_markets + j][i] = x[i][j];
        }
    }
    let mut b = y.to_vec();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        let mut norm = 0.0;
        for i in j..n {
            norm += a[j][i] * a[j][i];
        }
        let norm = norm.sqrt();
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[j] = a[j][j] - alpha;
        for i in j + 1..n {
            v[i] = a[j][i];
        }
        let vnorm2: f64 = v[j..].iter().map(|z| z * z).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(j) {
                let mut d = 0.0;
                for i in j..n {
                    d += v[i] * col[i];
                }
                let f = 2.0 * d / vnorm2;
                for i in j..n {
                    col[i] -= f * v[i];
                }
            }
            let mut d = 0.0;
            for i in j..n {
                d += v[i] * b[i];
            }
            let f = 2.0 * d / vnorm2;
            for i in j..n {
                b[i] -= f * v[i];
            }
        }
        for (jj, row) in r.iter_mut().enumerate().take(j + 1) {
            row[j] = a[j][jj];
        }
    }
    let mut coef = vec![0.0; p];
    for j in (0..p).rev() {
        let mut s = b[j];
        for l in j + 1..p {
            s -= r[j][l] * coef[l];
        }
        coef[j] = s / r[j][j];
    }
    let beta = coef.split_off(n_markets);
    (coef, beta)
}
