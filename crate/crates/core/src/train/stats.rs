//! Pearson correlation and ordinary least squares in one pass.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("degenerate variance: {detail}{}", slope.map(|s| format!(" (slope still defined: {s})")).unwrap_or_default())]
    DegenerateVariance {
        detail: String,
        /// OLS slope/intercept, still defined when only the y variance collapses.
        slope: Option<f64>,
        intercept: Option<f64>,
    },
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasStats {
    pub pearson_r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

// Kahan compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// Pearson r of (x, y) and the OLS fit `y = slope * x + intercept`, computed
/// in a single pass with compensated summation.
pub fn pearson_ols(xs: &[f64], ys: &[f64]) -> Result<BiasStats, StatsError> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::TooFewSamples(n));
    }
    let mut sx = Compensated::default();
    let mut sy = Compensated::default();
    let mut sxx = Compensated::default();
    let mut syy = Compensated::default();
    let mut sxy = Compensated::default();
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        if !(x.is_finite() && y.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
        sx.add(x);
        sy.add(y);
        sxx.add(x * x);
        syy.add(y * y);
        sxy.add(x * y);
    }
    let nf = n as f64;
    let mean_x = sx.value() / nf;
    let mean_y = sy.value() / nf;
    let cov_xx = sxx.value() - sx.value() * mean_x;
    let cov_yy = syy.value() - sy.value() * mean_y;
    let cov_xy = sxy.value() - sx.value() * mean_y;

    if cov_xx <= 0.0 {
        return Err(StatsError::DegenerateVariance {
            detail: "x values all equal".into(),
            slope: None,
            intercept: None,
        });
    }
    let slope = cov_xy / cov_xx;
    let intercept = mean_y - slope * mean_x;
    if cov_yy <= 0.0 {
        return Err(StatsError::DegenerateVariance {
            detail: "y values all equal".into(),
            slope: Some(slope),
            intercept: Some(intercept),
        });
    }
    let pearson_r = cov_xy / (cov_xx.sqrt() * cov_yy.sqrt());
    Ok(BiasStats {
        pearson_r,
        slope,
        intercept,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Naive two-pass reference used as the independent oracle.
    pub(crate) fn two_pass_reference(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean_x = xs.iter().sum::<f64>() / n;
        let mean_y = ys.iter().sum::<f64>() / n;
        let mut cxx = 0.0;
        let mut cyy = 0.0;
        let mut cxy = 0.0;
        for (&x, &y) in xs.iter().zip(ys) {
            cxx += (x - mean_x) * (x - mean_x);
            cyy += (y - mean_y) * (y - mean_y);
            cxy += (x - mean_x) * (y - mean_y);
        }
        let slope = cxy / cxx;
        (cxy / (cxx.sqrt() * cyy.sqrt()), slope, mean_y - slope * mean_x)
    }

    #[test]
    fn perfect_line_is_exact() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x + 1.0).collect();
        let stats = pearson_ols(&xs, &ys).unwrap();
        assert!((stats.slope - 0.5).abs() < 1e-12);
        assert!((stats.intercept - 1.0).abs() < 1e-12);
        assert!((stats.pearson_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_y_reports_slope_in_error() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 2.0, 2.0, 2.0];
        match pearson_ols(&xs, &ys).unwrap_err() {
            StatsError::DegenerateVariance { slope, intercept, .. } => {
                assert_eq!(slope, Some(0.0));
                assert_eq!(intercept, Some(2.0));
            }
            other => panic!("expected degenerate variance, got {other}"),
        }
    }

    #[test]
    fn constant_x_has_no_slope() {
        let xs = [3.0, 3.0, 3.0];
        let ys = [1.0, 2.0, 3.0];
        match pearson_ols(&xs, &ys).unwrap_err() {
            StatsError::DegenerateVariance { slope, .. } => assert_eq!(slope, None),
            other => panic!("expected degenerate variance, got {other}"),
        }
    }

    #[test]
    fn matches_two_pass_reference_on_random_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(10..500);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|x| 0.3 * x + rng.random_range(-10.0..10.0))
                .collect();
            let stats = pearson_ols(&xs, &ys).unwrap();
            let (r_ref, slope_ref, intercept_ref) = two_pass_reference(&xs, &ys);
            assert!((stats.pearson_r - r_ref).abs() < 1e-9);
            assert!((stats.slope - slope_ref).abs() < 1e-9);
            assert!((stats.intercept - intercept_ref).abs() < 1e-9);
        }
    }

    #[test]
    fn pearson_bounded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let xs: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
            let ys: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
            let stats = pearson_ols(&xs, &ys).unwrap();
            assert!((-1.0..=1.0).contains(&stats.pearson_r));
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(matches!(
            pearson_ols(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::TooFewSamples(2))
        ));
    }
}
