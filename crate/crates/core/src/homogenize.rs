//! Effective drift and diffusion constants.
//!
//! Both environments use the harmonic-mean rule
//! `𝐚 = 1 / ⟨1/σ²⟩` and `𝐛 = ⟨b/σ²⟩ / ⟨1/σ²⟩`, where `⟨·⟩` is the invariant
//! distribution of the chain or the average over one period.

use serde::Serialize;

use crate::env::{stationary_dist, ChainSpec, EnvKind, PeriodicEnv};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogenizedCoefficients {
    pub b_eff: f64,
    pub a_eff: f64,
    pub kind: EnvKind,
    /// Periodic only: |full − half resolution| for the larger of the two constants.
    pub quadrature_error: Option<f64>,
}

pub fn homogenize_chain(spec: &ChainSpec) -> Result<HomogenizedCoefficients> {
    let pi = stationary_dist(spec)?;
    let mut inv = 0.0;
    let mut weighted = 0.0;
    for ((a, g), p) in spec.states().iter().zip(spec.observable()).zip(&pi) {
        let w = p / (a * a);
        inv += w;
        weighted += g * w;
    }
    Ok(HomogenizedCoefficients { b_eff: weighted / inv, a_eff: 1.0 / inv, kind: EnvKind::Chain, quadrature_error: None })
}

fn midpoint<I: Iterator<Item = (f64, f64)>>(cells: I) -> (f64, f64) {
    let mut n = 0usize;
    let mut inv = 0.0;
    let mut weighted = 0.0;
    for (s, b) in cells {
        let w = 1.0 / (s * s);
        inv += w;
        weighted += b * w;
        n += 1;
    }
    let inv = inv / n as f64;
    let weighted = weighted / n as f64;
    (weighted / inv, 1.0 / inv)
}

/// Midpoint quadrature over one period at the table resolution; the error
/// estimate compares against the rule on every other cell.
pub fn homogenize_periodic(env: &PeriodicEnv) -> Result<HomogenizedCoefficients> {
    let sigma = env.sigma_table();
    let drift = env.drift_table();
    if let Some(k) = sigma.iter().position(|s| !(s * s > 0.0)) {
        return Err(Error::InvalidEnvironment(format!("sigma^2 is not positive at cell {k}")));
    }
    let (b_eff, a_eff) = midpoint(sigma.iter().copied().zip(drift.iter().copied()));
    let quadrature_error = if sigma.len() >= 2 {
        let (b_half, a_half) = midpoint(sigma.iter().copied().zip(drift.iter().copied()).step_by(2));
        (b_eff - b_half).abs().max((a_eff - a_half).abs())
    } else {
        0.0
    };
    Ok(HomogenizedCoefficients { b_eff, a_eff, kind: EnvKind::Periodic, quadrature_error: Some(quadrature_error) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DEFAULT_RESOLUTION;

    #[test]
    fn two_state_by_hand() {
        let spec = ChainSpec::new(vec![1.0, 2.0], vec![vec![-1.0, 1.0], vec![1.0, -1.0]], vec![1.0, 0.0]).unwrap();
        let c = homogenize_chain(&spec).unwrap();
        assert!((c.b_eff - 0.8).abs() <= 1e-12);
        assert!((c.a_eff - 1.6).abs() <= 1e-12);
    }

    #[test]
    fn constant_observable_and_equal_states() {
        let spec = ChainSpec::new(vec![1.5, -1.5], vec![vec![-2.0, 2.0], vec![0.5, -0.5]], vec![0.3, 0.3]).unwrap();
        let c = homogenize_chain(&spec).unwrap();
        assert!((c.b_eff - 0.3).abs() < 1e-14);
        assert!((c.a_eff - 2.25).abs() < 1e-14);
    }

    #[test]
    fn periodic_constant() {
        let env = PeriodicEnv::from_fn(|_| 1.3, |_| -0.4, 64).unwrap();
        let c = homogenize_periodic(&env).unwrap();
        assert!((c.b_eff + 0.4).abs() < 1e-14);
        assert!((c.a_eff - 1.69).abs() < 1e-13);
        assert!(c.quadrature_error.unwrap() < 1e-14);
    }

    #[test]
    fn periodic_two_piece() {
        let env = PeriodicEnv::from_fn(|s| if s < 0.5 { 1.0 } else { 2.0 }, |_| 0.0, DEFAULT_RESOLUTION).unwrap();
        let c = homogenize_periodic(&env).unwrap();
        assert!((c.a_eff - 1.6).abs() < 1e-12);
        assert_eq!(c.b_eff, 0.0);
    }

    #[test]
    fn periodic_smooth_profile() {
        // ∫₀¹ ds / (2 + sin 2πs) = 1/√3
        let env = PeriodicEnv::from_fn(
            |s| (2.0 + (2.0 * std::f64::consts::PI * s).sin()).sqrt(),
            |_| 0.0,
            DEFAULT_RESOLUTION,
        )
        .unwrap();
        let c = homogenize_periodic(&env).unwrap();
        assert!((c.a_eff - 3f64.sqrt()).abs() < 1e-6);
        assert!(c.quadrature_error.unwrap() < 1e-6);
    }
}
