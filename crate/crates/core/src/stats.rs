//! Small numeric helpers: compensated summation and empirical quantiles.

use statrs::distribution::{ContinuousCDF, Normal};

/// Neumaier-compensated running sum. Summation order still matters for the
/// last bit, so callers iterate in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn csum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Lower empirical quantile (Hyndman-Fan type 1): the smallest order statistic
/// whose empirical CDF reaches `p`. Always returns an observed value.
///
/// `sorted` must be ascending and nonempty.
pub fn quantile_lower(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    // n * p is computed in floating point; shave an ulp-scale epsilon so that
    // e.g. 0.85 * 20 lands on 17 rather than 17.000000000000004.
    let k = ((n as f64) * p - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

/// Linearly interpolated quantile (Hyndman-Fan type 7).
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sort_floats(v: &mut [f64]) {
    v.sort_by(|a, b| a.total_cmp(b));
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Interquartile range rescaled to a standard deviation under normality.
pub fn robust_spread(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    sort_floats(&mut v);
    let iqr = quantile_linear(&v, 0.75) - quantile_linear(&v, 0.25);
    iqr / (normal_quantile(0.75) - normal_quantile(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(csum(xs), 2.0);
    }

    #[test]
    fn lower_quantile_is_an_order_statistic() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(quantile_lower(&v, 0.85), 17.0);
        assert_eq!(quantile_lower(&v, 0.5), 10.0);
        assert_eq!(quantile_lower(&v, 0.0), 1.0);
        assert_eq!(quantile_lower(&v, 1.0), 20.0);
        assert_eq!(quantile_lower(&[3.0], 0.3), 3.0);
    }

    #[test]
    fn linear_quantile_interpolates() {
        let v = [0.0, 10.0];
        assert_eq!(quantile_linear(&v, 0.25), 2.5);
    }

    #[test]
    fn normal_quantile_matches_tables() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_quantile(0.75) - 0.674_489_750_196_081_7).abs() < 1e-9);
    }

    #[test]
    fn robust_spread_of_constant_is_zero() {
        assert_eq!(robust_spread(&[2.0; 10]), 0.0);
    }
}
