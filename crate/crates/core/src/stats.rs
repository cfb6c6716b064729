//! Small statistics toolbox: running moments, Monte Carlo estimates,
//! Kolmogorov–Smirnov and χ² tests, Clopper–Pearson limits.

use serde::Serialize;
use statrs::distribution::{Beta, ChiSquared, ContinuousCDF, Normal};

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> MonteCarloEstimate {
        MonteCarloEstimate::from_moments(self)
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Point estimate with its standard error and a two-sided 99% normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

impl MonteCarloEstimate {
    pub fn from_moments(m: &Moments) -> Self {
        let estimate = m.mean();
        let stderr = m.stderr();
        Self {
            estimate,
            stderr,
            n: m.count(),
            ci_low: estimate - Z99 * stderr,
            ci_high: estimate + Z99 * stderr,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }

    pub fn overlaps(&self, other: &MonteCarloEstimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }

    /// |estimate - target| measured in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.estimate - target).abs() / self.stderr
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_sf(x: f64) -> f64 {
    Normal::standard().sf(x)
}

/// Survival function of the Kolmogorov distribution, P(K > lambda).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series converges fast for small lambda.
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let mut cdf = 0.0;
        let mut k = 1;
        loop {
            let term = y.powi(k * k);
            cdf += term;
            if term < 1e-17 {
                break;
            }
            k += 2;
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let x = (-2.0 * lambda * lambda).exp();
        let mut sf = 0.0;
        let mut sign = 1.0;
        for k in 1..=100i32 {
            let term = x.powi(k * k);
            sf += sign * term;
            if term < 1e-17 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sf).clamp(0.0, 1.0)
    }
}

/// Outcome of a Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsOutcome {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sn = n_eff.sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample KS test of `sample` against the continuous CDF `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> KsOutcome {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let hi = (i + 1) as f64 / n - f;
            let lo = f - i as f64 / n;
            hi.max(lo)
        })
        .fold(0.0, f64::max);
    KsOutcome { statistic: d, p_value: ks_p_value(d, n) }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsOutcome {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
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
    KsOutcome { statistic: d, p_value: ks_p_value(d, n * m / (n + m)) }
}

/// Pearson χ² goodness-of-fit of observed counts against probabilities.
/// Returns `(statistic, p_value)`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    let total: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1) as f64;
    let p = ChiSquared::new(dof).map(|c| c.sf(stat)).unwrap_or(f64::NAN);
    (stat, p)
}

/// One-sided Clopper–Pearson upper limit at confidence `1 - alpha`.
pub fn clopper_pearson_upper(successes: u64, n: u64, alpha: f64) -> f64 {
    if successes >= n {
        return 1.0;
    }
    let beta = Beta::new(successes as f64 + 1.0, (n - successes) as f64).expect("beta parameters");
    beta.inverse_cdf(1.0 - alpha)
}

/// One-sided Clopper–Pearson lower limit at confidence `1 - alpha`.
pub fn clopper_pearson_lower(successes: u64, n: u64, alpha: f64) -> f64 {
    if successes == 0 {
        return 0.0;
    }
    let beta = Beta::new(successes as f64, (n - successes) as f64 + 1.0).expect("beta parameters");
    beta.inverse_cdf(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25];
        let m: Moments = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((m.mean() - mean).abs() < 1e-14);
        assert!((m.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // Both series are valid everywhere; compare them at the switch point.
        let lam: f64 = 1.18;
        let x = (-2.0 * lam * lam).exp();
        let alt: f64 = 2.0 * (1..50).map(|k: i32| (if k % 2 == 1 { 1.0 } else { -1.0 }) * x.powi(k * k)).sum::<f64>();
        assert!((kolmogorov_sf(lam - 1e-12) - alt).abs() < 1e-9);
        // Known critical value: P(K > 1.6276) = 0.01.
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 2e-4);
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 2e-4);
    }

    #[test]
    fn ks_two_sample_identical_samples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let out = ks_two_sample(&a, &a);
        assert_eq!(out.statistic, 0.0);
        assert!((out.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_two_sample_disjoint_samples() {
        let a: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..200).map(|i| 1000.0 + i as f64).collect();
        let out = ks_two_sample(&a, &b);
        assert_eq!(out.statistic, 1.0);
        assert!(out.p_value < 1e-10);
    }

    #[test]
    fn ks_one_sample_uniform_grid() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let out = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!((out.statistic - 0.5 / n as f64).abs() < 1e-12);
        assert!(out.passes(0.01));
    }

    #[test]
    fn clopper_pearson_brackets_frequency() {
        let (k, n) = (30, 1000);
        let lo = clopper_pearson_lower(k, n, 0.01);
        let hi = clopper_pearson_upper(k, n, 0.01);
        assert!(lo < 0.03 && 0.03 < hi);
        assert_eq!(clopper_pearson_lower(0, n, 0.01), 0.0);
        // Zero successes: upper limit is 1 - alpha^(1/n).
        let expect = 1.0 - 0.01f64.powf(1.0 / n as f64);
        assert!((clopper_pearson_upper(0, n, 0.01) - expect).abs() < 1e-9);
    }

    #[test]
    fn chi_square_perfect_fit() {
        let (stat, p) = chi_square_gof(&[250, 750], &[0.25, 0.75]);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
