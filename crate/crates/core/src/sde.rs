//! Path simulation for `dX = b(X/ε) dt + ε^κ σ(X/ε) dB`.
//!
//! Two constructions are provided: an Euler–Maruyama scheme, and the exact
//! time change of an auxiliary Brownian motion `β`, where the driftless
//! process is `Y_t = x0 + β_{τ_t}` and `τ` inverts the additive clock
//! `C(r) = ∫₀ʳ ds / (ε^{2κ} σ²((β_s + x0)/ε))`. Drift is added to driftless
//! paths through the Girsanov weight
//! `log Υ_T = Σ θ_i ΔB_i − ½ Σ θ_i² Δt`, `θ = b / (ε^κ σ)`.
//!
//! All integrands are evaluated at the left endpoint of each step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{EnvKind, Environment};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Default `dt` as a fraction of the horizon.
pub const DEFAULT_DT_FRACTION: f64 = 1e-4;
/// Default cap on the clock consumed by one `β` step, as a fraction of `dt`.
pub const DEFAULT_CLOCK_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Random environment, `κ < 1/6`.
    RandomMdp,
    RandomOutside,
    /// Periodic environment, `κ < 1/2`.
    PeriodicMdp,
    PeriodicOutside,
}

impl Regime {
    pub fn classify(kind: EnvKind, kappa: f64) -> Self {
        match kind {
            EnvKind::Chain if kappa < 1.0 / 6.0 => Regime::RandomMdp,
            EnvKind::Chain => Regime::RandomOutside,
            EnvKind::Periodic if kappa < 0.5 => Regime::PeriodicMdp,
            EnvKind::Periodic => Regime::PeriodicOutside,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::RandomMdp => "random_kappa_lt_1_6",
            Regime::RandomOutside => "random_kappa_ge_1_6",
            Regime::PeriodicMdp => "periodic_kappa_lt_1_2",
            Regime::PeriodicOutside => "periodic_kappa_ge_1_2",
        }
    }

    pub fn in_mdp_range(&self) -> bool {
        matches!(self, Regime::RandomMdp | Regime::PeriodicMdp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationParams {
    pub epsilon: f64,
    pub kappa: f64,
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Step of the auxiliary Brownian motion; `None` picks the default budget.
    pub h_beta: Option<f64>,
    pub seed: u64,
}

impl SimulationParams {
    pub fn new(epsilon: f64, kappa: f64, x0: f64, horizon: f64) -> Result<Self> {
        let p = Self { epsilon, kappa, x0, horizon, dt: DEFAULT_DT_FRACTION * horizon, h_beta: None, seed: 0 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        self.dt = dt;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_h_beta(mut self, h: f64) -> Result<Self> {
        self.h_beta = Some(h);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos("epsilon", self.epsilon)?;
        pos("kappa", self.kappa)?;
        pos("T", self.horizon)?;
        pos("dt", self.dt)?;
        if let Some(h) = self.h_beta {
            pos("h_beta", h)?;
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidParams(format!("x0 must be finite, got {}", self.x0)));
        }
        let n = (self.horizon / self.dt).round();
        if n < 1.0 || (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::InvalidParams(format!("T/dt = {} is not an integer", self.horizon / self.dt)));
        }
        Ok(())
    }

    /// Number of time steps.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Grid time of step `k`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps() {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    /// `ε^κ`.
    pub fn noise_scale(&self) -> f64 {
        self.epsilon.powf(self.kappa)
    }

    /// `ε^{2κ}`, the large-deviation speed.
    pub fn speed(&self) -> f64 {
        self.epsilon.powf(2.0 * self.kappa)
    }

    pub fn regime(&self, kind: EnvKind) -> Regime {
        Regime::classify(kind, self.kappa)
    }

    /// β step so that one step consumes at most `DEFAULT_CLOCK_FRACTION · dt`
    /// of clock time in the slowest cell.
    pub fn h_beta_for(&self, sigma_min: f64) -> f64 {
        self.h_beta
            .unwrap_or(DEFAULT_CLOCK_FRACTION * self.dt * self.speed() * sigma_min * sigma_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Timechange,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Timechange => "timechange",
        }
    }
}

/// One simulated trajectory on the uniform grid `t_k = k·dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Driving Brownian motion `B` on the same grid.
    pub driving: Vec<f64>,
    pub girsanov_log_weight: Option<f64>,
    pub scheme: Scheme,
    pub with_drift: bool,
    pub params: SimulationParams,
}

/// Data passed to an Euler visitor for step `k → k+1`.
#[derive(Debug, Clone, Copy)]
pub struct EulerStep {
    pub k: usize,
    pub t: f64,
    pub x: f64,
    pub sigma: f64,
    pub drift: f64,
    /// Increment of the driving Brownian motion.
    pub db: f64,
    pub x_next: f64,
}

/// Euler–Maruyama walk; `visit` sees every step and returns `false` to stop.
///
/// The applied drift is `b(x/ε)·[with_drift] + extra_drift`.
pub fn euler_walk<E, R, F>(
    params: &SimulationParams,
    env: &mut E,
    with_drift: bool,
    extra_drift: f64,
    rng: &mut R,
    mut visit: F,
) where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&EulerStep) -> bool,
{
    let n = params.steps();
    let dt = params.dt;
    let sqrt_dt = dt.sqrt();
    let scale = params.noise_scale();
    let inv_eps = 1.0 / params.epsilon;
    let drift_on = if with_drift { 1.0 } else { 0.0 };
    let mut x = params.x0;
    for k in 0..n {
        let (sigma, b) = env.coefficients(x * inv_eps);
        let xi: f64 = rng.sample(StandardNormal);
        let db = sqrt_dt * xi;
        let x_next = x + (drift_on * b + extra_drift) * dt + scale * sigma * db;
        if !visit(&EulerStep { k, t: params.time(k), x, sigma, drift: b, db, x_next }) {
            return;
        }
        x = x_next;
    }
}

/// Grid point emitted by the time-change construction.
#[derive(Debug, Clone, Copy)]
pub struct ClockPoint {
    pub k: usize,
    pub t: f64,
    pub y: f64,
    /// Driving Brownian motion `B_t = ∫ dβ_τ / (ε^κ σ)`.
    pub driving: f64,
    /// Girsanov log-weight accumulated up to `t` along the β grid.
    pub log_weight: f64,
}

/// Time-change walk; `visit` sees every grid time `t_0 … t_n` and returns
/// `false` to stop.
pub fn timechange_walk<E, R, F>(params: &SimulationParams, env: &mut E, rng: &mut R, mut visit: F)
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&ClockPoint) -> bool,
{
    let n = params.steps();
    let speed = params.speed();
    let scale = params.noise_scale();
    let inv_eps = 1.0 / params.epsilon;
    let h = params.h_beta_for(env.sigma_range().0);
    let sqrt_h = h.sqrt();

    let (mut beta, mut clock, mut b_acc, mut log_w) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    if !visit(&ClockPoint { k: 0, t: 0.0, y: params.x0, driving: 0.0, log_weight: 0.0 }) {
        return;
    }
    let mut k = 1usize;
    while k <= n {
        let (sigma, b) = env.coefficients((beta + params.x0) * inv_eps);
        let xi: f64 = rng.sample(StandardNormal);
        let d_beta = sqrt_h * xi;
        let d_clock = h / (speed * sigma * sigma);
        let d_b = d_beta / (scale * sigma);
        let theta = b / (scale * sigma);
        let d_logw = theta * d_b - 0.5 * theta * theta * d_clock;
        let next_clock = clock + d_clock;
        while k <= n {
            let t = params.time(k);
            if t > next_clock {
                break;
            }
            let frac = (t - clock) / d_clock;
            let point = ClockPoint {
                k,
                t,
                y: params.x0 + beta + frac * d_beta,
                driving: b_acc + frac * d_b,
                log_weight: log_w + frac * d_logw,
            };
            if !visit(&point) {
                return;
            }
            k += 1;
        }
        beta += d_beta;
        clock = next_clock;
        b_acc += d_b;
        log_w += d_logw;
    }
}

/// Euler–Maruyama path; the Brownian stream comes from `params.seed`.
pub fn simulate_euler<E: Environment + ?Sized>(params: &SimulationParams, env: &mut E, with_drift: bool) -> Result<DiffusionPath> {
    params.validate()?;
    let n = params.steps();
    let mut rng = rng::stream(params.seed, Domain::Brownian, 0);
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    let mut driving = Vec::with_capacity(n + 1);
    times.push(0.0);
    values.push(params.x0);
    driving.push(0.0);
    let mut b_acc = 0.0;
    euler_walk(params, env, with_drift, 0.0, &mut rng, |s| {
        b_acc += s.db;
        times.push(params.time(s.k + 1));
        values.push(s.x_next);
        driving.push(b_acc);
        true
    });
    Ok(DiffusionPath { times, values, driving, girsanov_log_weight: None, scheme: Scheme::Euler, with_drift, params: *params })
}

/// Driftless path by the time change of an auxiliary Brownian motion.
pub fn simulate_timechange<E: Environment + ?Sized>(params: &SimulationParams, env: &mut E) -> Result<DiffusionPath> {
    params.validate()?;
    let n = params.steps();
    let mut rng = rng::stream(params.seed, Domain::AuxBrownian, 0);
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    let mut driving = Vec::with_capacity(n + 1);
    timechange_walk(params, env, &mut rng, |p| {
        times.push(p.t);
        values.push(p.y);
        driving.push(p.driving);
        true
    });
    Ok(DiffusionPath {
        times,
        values,
        driving,
        girsanov_log_weight: None,
        scheme: Scheme::Timechange,
        with_drift: false,
        params: *params,
    })
}

/// `log Υ_T` for a stored driftless path, with `θ` evaluated at the left
/// endpoint of each grid step and `ΔB` read from the stored driving motion.
pub fn girsanov_log_weight<E: Environment + ?Sized>(
    path: &DiffusionPath,
    params: &SimulationParams,
    env: &mut E,
) -> Result<f64> {
    if path.with_drift {
        return Err(Error::InvalidWeightRequest("path was simulated with drift".into()));
    }
    let p = &path.params;
    if p.epsilon != params.epsilon || p.kappa != params.kappa || p.x0 != params.x0 || p.dt != params.dt || p.horizon != params.horizon {
        return Err(Error::InvalidWeightRequest("parameters differ from those that produced the path".into()));
    }
    let n = params.steps();
    if path.values.len() != n + 1 || path.driving.len() != n + 1 || path.times.len() != n + 1 {
        return Err(Error::InvalidWeightRequest(format!(
            "path has {} points, parameters imply {}",
            path.values.len(),
            n + 1
        )));
    }
    let scale = params.noise_scale();
    let mut log_w = 0.0;
    for k in 0..n {
        let (sigma, b) = env.coefficients(path.values[k] / params.epsilon);
        let theta = b / (scale * sigma);
        let db = path.driving[k + 1] - path.driving[k];
        log_w += theta * db - 0.5 * theta * theta * (path.times[k + 1] - path.times[k]);
    }
    Ok(log_w)
}

/// Attaches the Girsanov weight to a driftless path.
pub fn with_girsanov_weight<E: Environment + ?Sized>(
    mut path: DiffusionPath,
    env: &mut E,
) -> Result<DiffusionPath> {
    let params = path.params;
    path.girsanov_log_weight = Some(girsanov_log_weight(&path, &params, env)?);
    Ok(path)
}

/// Rough count of environment cells a run will touch, compared with a budget.
/// Returns a diagnostic message when the budget is exceeded.
pub fn cell_budget_diagnostic(params: &SimulationParams, sigma_max: f64, drift_max: f64, budget: f64) -> Option<String> {
    let spread = drift_max.abs() * params.horizon + 6.0 * params.noise_scale() * sigma_max * params.horizon.sqrt();
    let cells = 2.0 * spread / params.epsilon;
    (cells > budget).then(|| {
        format!(
            "epsilon = {} will touch about {cells:.3e} environment cells per path (budget {budget:.3e})",
            params.epsilon
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{realize, ChainSpec, PeriodicEnv};
    use crate::stats::Moments;

    fn two_state() -> ChainSpec {
        ChainSpec::new(vec![1.0, 2.0], vec![vec![-1.0, 1.0], vec![1.0, -1.0]], vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(SimulationParams::new(0.1, 0.1, 0.0, 1.0).is_ok());
        assert!(SimulationParams::new(0.0, 0.1, 0.0, 1.0).is_err());
        assert!(SimulationParams::new(0.1, -0.1, 0.0, 1.0).is_err());
        let p = SimulationParams::new(0.1, 0.1, 0.0, 1.0).unwrap();
        assert!(p.with_dt(0.3).is_err());
        assert_eq!(p.with_dt(0.25).unwrap().steps(), 4);
        assert_eq!(p.steps(), 10_000);
    }

    #[test]
    fn regime_flags() {
        assert_eq!(Regime::classify(EnvKind::Chain, 0.1), Regime::RandomMdp);
        assert_eq!(Regime::classify(EnvKind::Chain, 0.2), Regime::RandomOutside);
        assert_eq!(Regime::classify(EnvKind::Periodic, 0.2), Regime::PeriodicMdp);
        assert_eq!(Regime::classify(EnvKind::Periodic, 0.6), Regime::PeriodicOutside);
    }

    #[test]
    fn euler_same_seed_same_path() {
        let spec = two_state();
        let p = SimulationParams::new(0.1, 0.1, 0.0, 1.0).unwrap().with_dt(1e-3).unwrap().with_seed(3);
        let a = simulate_euler(&p, &mut realize(&spec, 1).unwrap(), true).unwrap();
        let b = simulate_euler(&p, &mut realize(&spec, 1).unwrap(), true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[0], 0.0);
        assert_eq!(a.values.len(), 1001);
    }

    #[test]
    fn timechange_same_seed_same_path() {
        let spec = two_state();
        let p = SimulationParams::new(0.1, 0.1, 0.5, 1.0).unwrap().with_dt(1e-3).unwrap().with_seed(9);
        let a = simulate_timechange(&p, &mut realize(&spec, 2).unwrap()).unwrap();
        let b = simulate_timechange(&p, &mut realize(&spec, 2).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[0], 0.5);
        assert_eq!(a.times.len(), 1001);
        assert!(a.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn timechange_constant_sigma_has_linear_clock() {
        // With σ ≡ s₀ the clock is deterministic, so grid points hit the
        // β grid exactly every dt / h_β steps.
        let s0 = 1.5;
        let mut env = PeriodicEnv::constant(s0, 0.0).unwrap();
        let p = SimulationParams::new(0.2, 0.25, 0.0, 1.0).unwrap().with_dt(0.01).unwrap();
        let mut rng = rng::stream(4, Domain::AuxBrownian, 0);
        let mut betas = Vec::new();
        let h = p.h_beta_for(s0);
        assert!((h - 0.1 * 0.01 * p.speed() * s0 * s0).abs() < 1e-18);
        timechange_walk(&p, &mut env, &mut rng, |c| {
            betas.push((c.t, c.y, c.driving));
            true
        });
        // Y = ε^κ s₀ B exactly.
        for &(_, y, b) in &betas {
            assert!((y - p.noise_scale() * s0 * b).abs() < 1e-12);
        }
        assert_eq!(betas.len(), 101);
    }

    #[test]
    fn constant_coefficients_terminal_moments() {
        let (s0, b0) = (1.3, 0.7);
        let mut env = PeriodicEnv::constant(s0, b0).unwrap();
        let p = SimulationParams::new(0.1, 0.2, 0.3, 2.0).unwrap().with_dt(0.01).unwrap();
        let n = 10_000;
        let mut drift_free = Moments::new();
        let mut drifted = Moments::new();
        for i in 0..n {
            let mut rng = rng::stream(77, Domain::Brownian, i);
            let mut last = p.x0;
            euler_walk(&p, &mut env, false, 0.0, &mut rng, |s| {
                last = s.x_next;
                true
            });
            drift_free.push(last - p.x0);
            let mut rng = rng::stream(78, Domain::Brownian, i);
            euler_walk(&p, &mut env, true, 0.0, &mut rng, |s| {
                last = s.x_next;
                true
            });
            drifted.push(last);
        }
        let var = p.speed() * s0 * s0 * p.horizon;
        // SE of a sample variance from Gaussian data: var * sqrt(2/(n-1)).
        let se_var = var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((drift_free.variance() - var).abs() < 3.0 * se_var);
        assert!(drift_free.estimate().z_score(0.0) < 3.0);
        assert!(drifted.estimate().z_score(p.x0 + b0 * p.horizon) < 3.0);
    }

    #[test]
    fn timechange_constant_sigma_variance() {
        let s0 = 0.8;
        let mut env = PeriodicEnv::constant(s0, 0.0).unwrap();
        let p = SimulationParams::new(0.05, 0.1, 0.0, 1.0).unwrap().with_dt(0.01).unwrap();
        let n = 10_000;
        let mut m = Moments::new();
        for i in 0..n {
            let mut rng = rng::stream(12, Domain::AuxBrownian, i);
            let mut last = 0.0;
            timechange_walk(&p, &mut env, &mut rng, |c| {
                last = c.y;
                true
            });
            m.push(last);
        }
        let var = p.speed() * s0 * s0;
        let se_var = var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((m.variance() - var).abs() < 3.0 * se_var, "{} vs {var}", m.variance());
    }

    #[test]
    fn girsanov_zero_drift_is_zero() {
        let spec = ChainSpec::new(vec![1.0, 2.0], vec![vec![-1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0]).unwrap();
        let p = SimulationParams::new(0.1, 0.1, 0.0, 1.0).unwrap().with_dt(1e-3).unwrap();
        let mut env = realize(&spec, 3).unwrap();
        let path = simulate_euler(&p, &mut env, false).unwrap();
        assert_eq!(girsanov_log_weight(&path, &p, &mut env).unwrap(), 0.0);
        let tc = simulate_timechange(&p, &mut env).unwrap();
        assert_eq!(girsanov_log_weight(&tc, &p, &mut env).unwrap(), 0.0);
    }

    #[test]
    fn girsanov_rejects_mismatch() {
        let spec = two_state();
        let p = SimulationParams::new(0.1, 0.1, 0.0, 1.0).unwrap().with_dt(1e-3).unwrap();
        let mut env = realize(&spec, 3).unwrap();
        let drifted = simulate_euler(&p, &mut env, true).unwrap();
        assert!(matches!(girsanov_log_weight(&drifted, &p, &mut env), Err(Error::InvalidWeightRequest(_))));
        let path = simulate_euler(&p, &mut env, false).unwrap();
        let other = SimulationParams { epsilon: 0.2, ..p };
        assert!(matches!(girsanov_log_weight(&path, &other, &mut env), Err(Error::InvalidWeightRequest(_))));
    }

    #[test]
    fn girsanov_from_stored_path_matches_streaming_weight() {
        let spec = two_state();
        let p = SimulationParams::new(0.1, 0.1, 0.0, 1.0).unwrap().with_dt(1e-3).unwrap().with_seed(5);
        let mut env = realize(&spec, 8).unwrap();
        let path = with_girsanov_weight(simulate_euler(&p, &mut env, false).unwrap(), &mut env).unwrap();
        let mut rng = rng::stream(5, Domain::Brownian, 0);
        let scale = p.noise_scale();
        let mut lw = 0.0;
        euler_walk(&p, &mut env, false, 0.0, &mut rng, |s| {
            let th = s.drift / (scale * s.sigma);
            lw += th * s.db - 0.5 * th * th * p.dt;
            true
        });
        assert!((path.girsanov_log_weight.unwrap() - lw).abs() < 1e-12);
    }

    #[test]
    fn quadratic_variation_matches_clock() {
        let spec = two_state();
        let p = SimulationParams::new(0.1, 0.1, 0.0, 1.0).unwrap();
        let mut ratio = Moments::new();
        for i in 0..100 {
            let mut env = realize(&spec, 1000 + i).unwrap();
            let p = p.with_seed(i);
            let path = simulate_euler(&p, &mut env, false).unwrap();
            let mut qv = 0.0;
            let mut integral = 0.0;
            for k in 0..p.steps() {
                qv += (path.values[k + 1] - path.values[k]).powi(2);
                let (s, _) = env.coefficients(path.values[k] / p.epsilon);
                integral += p.speed() * s * s * p.dt;
            }
            ratio.push(qv / integral);
        }
        assert!((ratio.mean() - 1.0).abs() < 0.05);
    }

    #[test]
    fn cell_budget() {
        let p = SimulationParams::new(1e-6, 0.1, 0.0, 1.0).unwrap();
        assert!(cell_budget_diagnostic(&p, 2.0, 1.0, 1e6).is_some());
        let p = SimulationParams::new(0.1, 0.1, 0.0, 1.0).unwrap();
        assert!(cell_budget_diagnostic(&p, 2.0, 1.0, 1e6).is_none());
    }
}
