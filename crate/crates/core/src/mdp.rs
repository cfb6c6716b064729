//! Moderate-deviation rate function and Monte Carlo ε-scans.
//!
//! The rate function of the homogenized limit is
//! `J(u) = 1/(2𝐚) ∫₀ᵀ (u̇_t − 𝐛)² dt` for absolutely continuous `u` with
//! `u_0 = x0`. Scans estimate `p(ε) = P(sup_{t≤T} |X_t − x0 − 𝐛t| > η)` and
//! report `−ε^{2κ} log p̂`, which should approach `η²/(2𝐚T)`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ChainSampler, ChainSpec, EnvKind, Environment, EnvironmentPath, PeriodicEnv};
use crate::error::{Error, Result};
use crate::homogenize::{homogenize_chain, homogenize_periodic, HomogenizedCoefficients};
use crate::parallel::{map_replicas, Threads};
use crate::rng::{self, Domain};
use crate::sde::{euler_walk, Regime, SimulationParams, DEFAULT_DT_FRACTION};
use crate::stats::Moments;
use crate::stats::Z99;

/// Continuous piecewise-linear path through `(t_j, u_j)` starting at `(0, x0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl RatePath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, x0: f64) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::InvalidPath(format!(
                "need at least two breakpoints with matching values ({} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidPath(format!("path must start at t = 0, got {}", times[0])));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPath("breakpoints must be strictly increasing".into()));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPath("breakpoints and values must be finite".into()));
        }
        if values[0] != x0 {
            return Err(Error::InvalidPath(format!("u(0) = {} differs from x0 = {x0}", values[0])));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// `J(u)`, exact for piecewise-linear `u`.
pub fn rate_j(path: &RatePath, coeffs: &HomogenizedCoefficients) -> f64 {
    let sum: f64 = path
        .times
        .windows(2)
        .zip(path.values.windows(2))
        .map(|(t, u)| {
            let dt = t[1] - t[0];
            let excess = (u[1] - u[0]) / dt - coeffs.b_eff;
            excess * excess * dt
        })
        .sum();
    sum / (2.0 * coeffs.a_eff)
}

/// `inf J` over paths leaving the η-tube around `x0 + 𝐛t` before `T`: `η²/(2𝐚T)`.
pub fn tube_exit_rate(eta: f64, horizon: f64, coeffs: &HomogenizedCoefficients) -> Result<f64> {
    if !(eta > 0.0) || !(horizon > 0.0) || !eta.is_finite() || !horizon.is_finite() {
        return Err(Error::InvalidQuery(format!("eta and T must be positive (eta = {eta}, T = {horizon})")));
    }
    Ok(eta * eta / (2.0 * coeffs.a_eff * horizon))
}

/// Where the environment of a scan comes from.
#[derive(Debug, Clone)]
pub enum EnvSource {
    Chain(Arc<ChainSampler>),
    Periodic(PeriodicEnv),
}

impl EnvSource {
    pub fn chain(spec: &ChainSpec) -> Result<Self> {
        Ok(EnvSource::Chain(Arc::new(ChainSampler::new(spec)?)))
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSource::Chain(_) => EnvKind::Chain,
            EnvSource::Periodic(_) => EnvKind::Periodic,
        }
    }

    pub fn coefficients(&self) -> Result<HomogenizedCoefficients> {
        match self {
            EnvSource::Chain(s) => homogenize_chain(s.spec()),
            EnvSource::Periodic(p) => homogenize_periodic(p),
        }
    }

    /// Largest `|b|`.
    pub fn drift_max(&self) -> f64 {
        let values: &[f64] = match self {
            EnvSource::Chain(s) => s.spec().observable(),
            EnvSource::Periodic(p) => p.drift_table(),
        };
        values.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    /// Runs `op` against a fresh environment realized from `seed`.
    pub fn with_env<R>(&self, seed: u64, op: impl FnOnce(&mut dyn Environment) -> R) -> R {
        match self {
            EnvSource::Chain(s) => op(&mut EnvironmentPath::new(s.clone(), seed)),
            EnvSource::Periodic(p) => op(&mut p.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Crude,
    Tilted,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Crude => "crude",
            Estimator::Tilted => "tilted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Functional {
    /// `∫ (b(X/ε) − 𝐛) ds`
    Drift,
    /// `∫ (σ²(X/ε) − 𝐚) ds`
    Diffusion,
}

/// Parameters shared by both scan kinds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanConfig {
    pub epsilons: Vec<f64>,
    pub kappa: f64,
    pub x0: f64,
    pub horizon: f64,
    /// Time step as a fraction of the horizon.
    pub dt_fraction: f64,
    pub eta: f64,
    pub replicas: u64,
    pub seed: u64,
    /// Tilt drift; defaults to `η/T`.
    pub tilt: Option<f64>,
    /// One environment shared by all replicas instead of a fresh one each.
    pub quenched: bool,
    /// Adds a crude row at the largest ε when the estimator is tilted.
    pub crude_check: bool,
    /// Account for tube crossings between grid points by the Brownian-bridge
    /// crossing probability (conditional expectation, no extra draws).
    pub bridge: bool,
}

impl ScanConfig {
    pub fn new(epsilons: Vec<f64>, kappa: f64, horizon: f64, eta: f64, replicas: u64) -> Self {
        Self {
            epsilons,
            kappa,
            x0: 0.0,
            horizon,
            dt_fraction: DEFAULT_DT_FRACTION,
            eta,
            replicas,
            seed: 0,
            tilt: None,
            quenched: false,
            crude_check: true,
            bridge: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::InvalidParams("epsilon list is empty".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParams(format!("eta must be positive, got {}", self.eta)));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidParams("replica count must be positive".into()));
        }
        if let Some(c) = self.tilt {
            if !c.is_finite() {
                return Err(Error::InvalidParams(format!("tilt must be finite, got {c}")));
            }
        }
        for &eps in &self.epsilons {
            self.params(eps)?;
        }
        Ok(())
    }

    fn params(&self, epsilon: f64) -> Result<SimulationParams> {
        SimulationParams::new(epsilon, self.kappa, self.x0, self.horizon)?.with_dt(self.dt_fraction * self.horizon)
    }

    /// ε values sorted descending, each with its position in `epsilons`.
    fn sorted_rows(&self) -> Vec<(u64, f64)> {
        let mut rows: Vec<(u64, f64)> = self.epsilons.iter().enumerate().map(|(i, &e)| (i as u64, e)).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1));
        rows
    }

    fn env_seed(&self, row: u64, replica: u64) -> u64 {
        if self.quenched {
            rng::replica_seed(self.seed, u64::MAX, 0)
        } else {
            rng::replica_seed(self.seed, row, replica)
        }
    }
}

/// One ε row of a scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub epsilon: f64,
    pub kappa: f64,
    pub eta: f64,
    pub estimator: Estimator,
    pub n: u64,
    pub p_hat: f64,
    pub stderr: f64,
    /// `−ε^{2κ} log p̂`; NaN when `p̂ = 0`.
    pub neg_rate: f64,
    pub predicted_rate: Option<f64>,
    pub regime: Regime,
    /// False when no replica hit the event.
    pub usable: bool,
}

impl ScanRow {
    fn from_moments(
        m: &Moments,
        params: &SimulationParams,
        eta: f64,
        estimator: Estimator,
        predicted_rate: Option<f64>,
        kind: EnvKind,
    ) -> Self {
        let p_hat = m.mean();
        let usable = p_hat > 0.0;
        Self {
            epsilon: params.epsilon,
            kappa: params.kappa,
            eta,
            estimator,
            n: m.count(),
            p_hat,
            stderr: m.stderr(),
            neg_rate: if usable { -params.speed() * p_hat.ln() } else { f64::NAN },
            predicted_rate,
            regime: params.regime(kind),
            usable,
        }
    }

    /// Two-sided 99% normal interval for `p`.
    pub fn ci99(&self) -> (f64, f64) {
        (self.p_hat - Z99 * self.stderr, self.p_hat + Z99 * self.stderr)
    }

    /// Diagnostic rate with `p̂ + 1/n` smoothing, finite even when `p̂ = 0`.
    pub fn smoothed_neg_rate(&self) -> f64 {
        let speed = self.epsilon.powf(2.0 * self.kappa);
        -speed * (self.p_hat + 1.0 / self.n as f64).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    pub coefficients: HomogenizedCoefficients,
    pub predicted_rate: Option<f64>,
}

impl ScanResult {
    /// Rows produced by `estimator`, in descending ε.
    pub fn rows_for(&self, estimator: Estimator) -> Vec<&ScanRow> {
        self.rows.iter().filter(|r| r.estimator == estimator).collect()
    }
}

/// Row tag for the extra crude row, kept clear of regular row indices.
const CRUDE_CHECK_ROW: u64 = 1 << 32;

/// Probability that a Brownian bridge from `z0` to `z1` with variance `var`
/// leaves `(−η, η)`; one if the endpoint is already outside.
pub fn bridge_exit_probability(z0: f64, z1: f64, eta: f64, var: f64) -> f64 {
    if z1.abs() > eta {
        return 1.0;
    }
    if var <= 0.0 {
        return 0.0;
    }
    let up = (-2.0 * (eta - z0) * (eta - z1) / var).exp();
    let down = (-2.0 * (eta + z0) * (eta + z1) / var).exp();
    (up + down).min(1.0)
}

/// One replica of the tube-exit estimator.
///
/// With `tilt = Some(c)` the drift gets an extra `±c` (sign drawn with
/// probability ½) and the exit is weighted by the likelihood ratio of the
/// target law against the two-component mixture, evaluated at the exit step.
/// With the bridge correction the replica returns
/// `Σ_k L_k S_{k−1} q_k`, where `q_k` is the step's crossing probability and
/// `S` the survival product; otherwise `q_k` is the grid indicator.
#[allow(clippy::too_many_arguments)]
fn tube_replica(
    source: &EnvSource,
    params: &SimulationParams,
    b_eff: f64,
    eta: f64,
    tilt: Option<f64>,
    bridge: bool,
    env_seed: u64,
    seed: u64,
) -> f64 {
    let (sign, c) = match tilt {
        Some(c) => (if rng::stream(seed, Domain::TiltSign, 0).random::<bool>() { 1.0 } else { -1.0 }, c),
        None => (0.0, 0.0),
    };
    let mut rng = rng::stream(seed, Domain::Brownian, 0);
    let scale = params.noise_scale();
    let dt = params.dt;
    // s_acc = Σ (c/(ε^κσ)) ΔB under the target law, q_acc = Σ c²/(ε^{2κ}σ²) dt
    let (mut s_acc, mut q_acc) = (0.0f64, 0.0f64);
    let mut survival = 1.0;
    let mut total = 0.0;
    source.with_env(env_seed, |env| {
        euler_walk(params, env, true, sign * c, &mut rng, |s| {
            if tilt.is_some() {
                let theta = c / (scale * s.sigma);
                let db_target = s.db + sign * theta * dt;
                s_acc += theta * db_target;
                q_acc += theta * theta * dt;
            }
            let z0 = s.x - params.x0 - b_eff * s.t;
            let z1 = s.x_next - params.x0 - b_eff * params.time(s.k + 1);
            let q = if bridge {
                bridge_exit_probability(z0, z1, eta, (scale * s.sigma).powi(2) * dt)
            } else if z1.abs() > eta {
                1.0
            } else {
                0.0
            };
            if q > 0.0 {
                let weight = if tilt.is_some() { mixture_weight(s_acc, q_acc) } else { 1.0 };
                total += weight * survival * q;
                survival *= 1.0 - q;
            }
            survival > 0.0
        })
    });
    total
}

/// `dP/dQ_mix = 1 / (½e^{L+} + ½e^{L−})` with `L± = ±s − q/2`.
fn mixture_weight(s: f64, q: f64) -> f64 {
    let a = s.abs();
    let log_cosh = a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2;
    (0.5 * q - log_cosh).exp()
}

/// Tube-exit probability scan over ε.
pub fn mdp_scan(source: &EnvSource, cfg: &ScanConfig, estimator: Estimator, threads: Threads) -> Result<ScanResult> {
    cfg.validate()?;
    let coeffs = source.coefficients()?;
    let predicted = tube_exit_rate(cfg.eta, cfg.horizon, &coeffs)?;
    let tilt = cfg.tilt.unwrap_or(cfg.eta / cfg.horizon);
    let kind = source.kind();
    let mut rows = Vec::new();
    let sorted = cfg.sorted_rows();
    for (pos, &(row, eps)) in sorted.iter().enumerate() {
        let params = cfg.params(eps)?;
        let samples = map_replicas(cfg.replicas, threads, |i| {
            let seed = rng::replica_seed(cfg.seed, row, i);
            let env_seed = cfg.env_seed(row, i);
            match estimator {
                Estimator::Crude => tube_replica(source, &params, coeffs.b_eff, cfg.eta, None, cfg.bridge, env_seed, seed),
                Estimator::Tilted => {
                    tube_replica(source, &params, coeffs.b_eff, cfg.eta, Some(tilt), cfg.bridge, env_seed, seed)
                }
            }
        });
        let m: Moments = samples.into_iter().collect();
        rows.push(ScanRow::from_moments(&m, &params, cfg.eta, estimator, Some(predicted), kind));

        if pos == 0 && estimator == Estimator::Tilted && cfg.crude_check {
            let check_row = CRUDE_CHECK_ROW + row;
            let samples = map_replicas(cfg.replicas, threads, |i| {
                let seed = rng::replica_seed(cfg.seed, check_row, i);
                let env_seed = cfg.env_seed(check_row, i);
                tube_replica(source, &params, coeffs.b_eff, cfg.eta, None, cfg.bridge, env_seed, seed)
            });
            let m: Moments = samples.into_iter().collect();
            rows.push(ScanRow::from_moments(&m, &params, cfg.eta, Estimator::Crude, Some(predicted), kind));
        }
    }
    Ok(ScanResult { rows, coefficients: coeffs, predicted_rate: Some(predicted) })
}

fn negligibility_hit(
    source: &EnvSource,
    params: &SimulationParams,
    coeffs: &HomogenizedCoefficients,
    which: Functional,
    eta: f64,
    env_seed: u64,
    seed: u64,
) -> f64 {
    let mut rng = rng::stream(seed, Domain::Brownian, 0);
    let dt = params.dt;
    let mut integral = 0.0;
    let mut hit = false;
    source.with_env(env_seed, |env| {
        euler_walk(params, env, true, 0.0, &mut rng, |s| {
            integral += match which {
                Functional::Drift => (s.drift - coeffs.b_eff) * dt,
                Functional::Diffusion => (s.sigma * s.sigma - coeffs.a_eff) * dt,
            };
            hit = integral.abs() > eta;
            !hit
        })
    });
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Scan of `P(sup_{t≤T} |∫₀ᵗ [·] ds| > η)` for the drift or diffusion
/// functional; always crude.
pub fn negligibility_scan(source: &EnvSource, cfg: &ScanConfig, which: Functional, threads: Threads) -> Result<ScanResult> {
    cfg.validate()?;
    let coeffs = source.coefficients()?;
    let kind = source.kind();
    let mut rows = Vec::new();
    for (row, eps) in cfg.sorted_rows() {
        let params = cfg.params(eps)?;
        let samples = map_replicas(cfg.replicas, threads, |i| {
            let seed = rng::replica_seed(cfg.seed, row, i);
            negligibility_hit(source, &params, &coeffs, which, cfg.eta, cfg.env_seed(row, i), seed)
        });
        let m: Moments = samples.into_iter().collect();
        rows.push(ScanRow::from_moments(&m, &params, cfg.eta, Estimator::Crude, None, kind));
    }
    Ok(ScanResult { rows, coefficients: coeffs, predicted_rate: None })
}
