//! Summary statistics, confidence intervals and goodness-of-fit tests.

use serde::Serialize;

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Kolmogorov asymptotic critical value at the 1% level.
pub const KS_C_1PCT: f64 = 1.627_6;

/// Two-sided normal quantile for joint coverage `level` over `m` intervals
/// (Bonferroni).
pub fn bonferroni_z(level: f64, m: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let alpha = (1.0 - level) / m.max(1) as f64;
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn half_width(&self, z: f64) -> f64 {
        z * self.std_error
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (0 for a single value).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn estimate_mean(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    MeanEstimate { mean: mean(xs), std_error: (variance(xs) / n as f64).sqrt(), n }
}

/// Frequency of `hits` in `n` trials with its binomial standard error,
/// evaluated at the reference probability `p_ref` when one is given.
pub fn estimate_proportion(hits: usize, n: usize, p_ref: Option<f64>) -> MeanEstimate {
    let p = hits as f64 / n as f64;
    let q = p_ref.unwrap_or(p);
    MeanEstimate { mean: p, std_error: (q * (1.0 - q) / n as f64).sqrt(), n }
}

/// One-sample Kolmogorov-Smirnov statistic `sup |F_n - F|` for a
/// right-continuous `cdf`, which may have atoms.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let v = xs[i];
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == v {
            j += 1;
        }
        let left = cdf(v - v.abs() * 1e-13 - 1e-300);
        d = d.max((i as f64 / n - left).abs());
        d = d.max(((j + 1) as f64 / n - cdf(v)).abs());
        i = j + 1;
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

pub fn ks_critical_one_sample(n: usize) -> f64 {
    KS_C_1PCT / (n as f64).sqrt()
}

pub fn ks_critical_two_sample(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    KS_C_1PCT * ((n + m) / (n * m)).sqrt()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_std_error = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    LinearFit { slope, intercept, slope_std_error }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bonferroni_quantiles() {
        assert!((bonferroni_z(0.99, 1) - Z99).abs() < 1e-9);
        // 0.01 / 10 two-sided
        assert!((bonferroni_z(0.99, 10) - 3.290_526_731_491_926).abs() < 1e-8);
    }

    #[test]
    fn mean_and_variance() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        let e = estimate_mean(&xs);
        assert!((e.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_uniform_grid_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ks_detects_atom_mismatch() {
        let xs = vec![0.0; 100];
        let d = ks_one_sample(&xs, |x| if x >= 0.0 { 0.5 + 0.5 * x.min(1.0) } else { 0.0 });
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ks_two_sample_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&a, &[10.0, 11.0]), 1.0);
        assert!((ks_two_sample(&[1.0, 2.0], &[1.5, 2.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn regression_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!(f.slope_std_error < 1e-12);
    }
}
