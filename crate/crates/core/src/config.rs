//! JSON experiment configuration. Unknown keys are rejected everywhere.

use serde::Deserialize;

use crate::chain_algebra::{diffusion_theta, drift_theta, CenteredObservable};
use crate::env::{ChainSpec, PeriodicEnv};
use crate::error::{Error, Result};
use crate::mdp::{EnvSource, Estimator, Functional, ScanConfig};
use crate::sde::{Scheme, SimulationParams, DEFAULT_DT_FRACTION};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub scan: Option<ScanBlock>,
    #[serde(default)]
    pub martingale: Option<MartingaleBlock>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvironmentConfig {
    Chain(ChainBlock),
    Periodic(PeriodicBlock),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainBlock {
    pub states: Vec<f64>,
    pub generator: Vec<Vec<f64>>,
    pub observable: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicBlock {
    pub sigma: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub epsilon: Vec<f64>,
    pub kappa: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub h_beta: Option<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_true")]
    pub with_drift: bool,
    /// Number of sample paths written by `simulate`.
    #[serde(default = "default_paths")]
    pub paths: u64,
    /// Keep every n-th grid point in `simulate` output.
    #[serde(default = "default_one")]
    pub record_every: usize,
    #[serde(default)]
    pub quenched: bool,
    /// Environment cells per path above which a diagnostic is printed.
    #[serde(default = "default_cell_budget")]
    pub cell_budget: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBlock {
    pub eta: f64,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    pub replicas: u64,
    /// Negligibility functional; both when absent.
    #[serde(default)]
    pub which: Option<Functional>,
    #[serde(default)]
    pub tilt: Option<f64>,
    #[serde(default = "default_true")]
    pub crude_check: bool,
    /// Brownian-bridge correction for crossings between grid points.
    #[serde(default)]
    pub bridge: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ObservableChoice {
    Named(NamedObservable),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NamedObservable {
    Drift,
    Diffusion,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleBlock {
    #[serde(default)]
    pub observable: Option<ObservableChoice>,
    pub horizon: f64,
    pub replicas: u64,
    #[serde(default = "default_r_grid")]
    pub r: Vec<f64>,
    #[serde(default = "default_q_grid")]
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), formats: default_formats() }
    }
}

fn default_scheme() -> Scheme {
    Scheme::Euler
}
fn default_true() -> bool {
    true
}
fn default_paths() -> u64 {
    1
}
fn default_one() -> usize {
    1
}
fn default_cell_budget() -> f64 {
    1e7
}
fn default_estimator() -> Estimator {
    Estimator::Crude
}
fn default_r_grid() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0]
}
fn default_q_grid() -> Vec<f64> {
    vec![5.0, 10.0, 20.0]
}
fn default_dir() -> String {
    "results".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

/// Validated environment.
#[derive(Debug, Clone)]
pub enum Environment {
    Chain(ChainSpec),
    Periodic(PeriodicEnv),
}

impl Environment {
    pub fn source(&self) -> Result<EnvSource> {
        match self {
            Environment::Chain(spec) => EnvSource::chain(spec),
            Environment::Periodic(p) => Ok(EnvSource::Periodic(p.clone())),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every block against the preconditions of the code that consumes it.
    pub fn validate(&self) -> Result<()> {
        let env = self.environment()?;
        if let Some(sim) = &self.simulation {
            for p in self.simulation_params()? {
                p.validate()?;
            }
            if sim.record_every == 0 {
                return Err(Error::Config("simulation.record_every must be at least 1".into()));
            }
            if sim.scheme == Scheme::Timechange && matches!(env, Environment::Periodic(_)) && sim.with_drift {
                return Err(Error::Config("timechange scheme simulates driftless paths; set with_drift to false".into()));
            }
        }
        if self.scan.is_some() {
            self.scan_config()?;
        }
        if let Some(m) = &self.martingale {
            if !(m.horizon > 0.0) || m.replicas == 0 {
                return Err(Error::Config("martingale.horizon and martingale.replicas must be positive".into()));
            }
            if m.r.iter().chain(&m.q).any(|v| !(*v > 0.0)) {
                return Err(Error::Config("martingale.r and martingale.q entries must be positive".into()));
            }
            if let Environment::Chain(spec) = &env {
                self.observables(spec)?;
            }
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("output.formats is empty".into()));
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<Environment> {
        match &self.environment {
            EnvironmentConfig::Chain(c) => {
                Ok(Environment::Chain(ChainSpec::new(c.states.clone(), c.generator.clone(), c.observable.clone())?))
            }
            EnvironmentConfig::Periodic(p) => Ok(Environment::Periodic(PeriodicEnv::from_tables(p.sigma.clone(), p.b.clone())?)),
        }
    }

    pub fn simulation(&self) -> Result<&SimulationConfig> {
        self.simulation.as_ref().ok_or_else(|| Error::Config("missing simulation block".into()))
    }

    /// One parameter set per ε, in config order.
    pub fn simulation_params(&self) -> Result<Vec<SimulationParams>> {
        let sim = self.simulation()?;
        if sim.epsilon.is_empty() {
            return Err(Error::Config("simulation.epsilon is empty".into()));
        }
        sim.epsilon
            .iter()
            .map(|&eps| {
                let p = SimulationParams::new(eps, sim.kappa, sim.x0, sim.horizon)?;
                let p = p.with_dt(sim.dt.unwrap_or(DEFAULT_DT_FRACTION * sim.horizon))?;
                let p = match sim.h_beta {
                    Some(h) => p.with_h_beta(h)?,
                    None => p,
                };
                Ok(p.with_seed(self.seed))
            })
            .collect()
    }

    pub fn scan_config(&self) -> Result<ScanConfig> {
        let sim = self.simulation()?;
        let scan = self.scan.as_ref().ok_or_else(|| Error::Config("missing scan block".into()))?;
        let dt = sim.dt.unwrap_or(DEFAULT_DT_FRACTION * sim.horizon);
        let cfg = ScanConfig {
            epsilons: sim.epsilon.clone(),
            kappa: sim.kappa,
            x0: sim.x0,
            horizon: sim.horizon,
            dt_fraction: dt / sim.horizon,
            eta: scan.eta,
            replicas: scan.replicas,
            seed: self.seed,
            tilt: scan.tilt,
            quenched: sim.quenched,
            crude_check: scan.crude_check,
            bridge: scan.bridge,
        };
        self.simulation_params()?;
        if !(scan.eta > 0.0) || scan.replicas == 0 {
            return Err(Error::Config("scan.eta and scan.replicas must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn martingale(&self) -> Result<&MartingaleBlock> {
        self.martingale.as_ref().ok_or_else(|| Error::Config("missing martingale block".into()))
    }

    /// Observables for the martingale checks, with their labels.
    pub fn observables(&self, spec: &ChainSpec) -> Result<Vec<(String, CenteredObservable)>> {
        let choice = self.martingale.as_ref().and_then(|m| m.observable.clone());
        match choice {
            None => Ok(vec![("drift".into(), drift_theta(spec)?), ("diffusion".into(), diffusion_theta(spec)?)]),
            Some(ObservableChoice::Named(NamedObservable::Drift)) => Ok(vec![("drift".into(), drift_theta(spec)?)]),
            Some(ObservableChoice::Named(NamedObservable::Diffusion)) => Ok(vec![("diffusion".into(), diffusion_theta(spec)?)]),
            Some(ObservableChoice::Values(v)) => Ok(vec![("custom".into(), CenteredObservable::from_raw(spec, &v)?)]),
        }
    }
}
