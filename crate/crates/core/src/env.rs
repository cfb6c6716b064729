//! Environments: stationary finite-state Markov chains indexed by space, and
//! deterministic period-1 profiles.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, Domain, SimRng};

/// Row-sum tolerance for generator validation.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default number of table points per period.
pub const DEFAULT_RESOLUTION: usize = 1 << 12;

/// Law of a stationary finite-state environment chain: alphabet values,
/// transition intensities and the drift observable `b = g(a_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    states: Vec<f64>,
    generator: DMatrix<f64>,
    observable: Vec<f64>,
}

impl ChainSpec {
    /// Builds and validates a spec. `generator` is given row by row.
    pub fn new(states: Vec<f64>, generator: Vec<Vec<f64>>, observable: Vec<f64>) -> Result<Self> {
        let m = states.len();
        if m < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 states, got {m}")));
        }
        if generator.len() != m || generator.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidGenerator(format!("generator must be {m}x{m}")));
        }
        let flat: Vec<f64> = generator.iter().flatten().copied().collect();
        Self::from_matrix(states, DMatrix::from_row_slice(m, m, &flat), observable)
    }

    pub fn from_matrix(states: Vec<f64>, generator: DMatrix<f64>, observable: Vec<f64>) -> Result<Self> {
        let m = states.len();
        if m < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 states, got {m}")));
        }
        if generator.nrows() != m || generator.ncols() != m {
            return Err(Error::InvalidGenerator(format!("generator must be {m}x{m}")));
        }
        if observable.len() != m {
            return Err(Error::InvalidSpec(format!(
                "observable has {} values for {m} states",
                observable.len()
            )));
        }
        for (i, &a) in states.iter().enumerate() {
            if !a.is_finite() || a == 0.0 {
                return Err(Error::InvalidSpec(format!("state value a_{i} = {a} must be finite and nonzero")));
            }
            if states[..i].contains(&a) {
                return Err(Error::InvalidSpec(format!("state value {a} is repeated")));
            }
        }
        if let Some(v) = observable.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec(format!("observable value {v} is not finite")));
        }
        for i in 0..m {
            let mut sum = 0.0;
            let mut scale: f64 = 1.0;
            for j in 0..m {
                let q = generator[(i, j)];
                if !q.is_finite() {
                    return Err(Error::InvalidGenerator(format!("row {i}: entry {j} is not finite")));
                }
                if i != j && q < 0.0 {
                    return Err(Error::InvalidGenerator(format!("row {i}: off-diagonal entry {j} is negative ({q})")));
                }
                sum += q;
                scale = scale.max(q.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidGenerator(format!("row {i} sums to {sum:e}, expected 0")));
            }
        }
        let spec = Self { states, generator, observable };
        if !spec.is_irreducible() {
            return Err(Error::NotErgodic("generator has more than one communicating class".into()));
        }
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn observable(&self) -> &[f64] {
        &self.observable
    }

    /// Total exit rate `-Λ_ii`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.generator[(i, i)]
    }

    fn is_irreducible(&self) -> bool {
        let m = self.len();
        let reach = |forward: bool| {
            let mut seen = vec![false; m];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                #[allow(clippy::needless_range_loop)]
                for j in 0..m {
                    let q = if forward { self.generator[(i, j)] } else { self.generator[(j, i)] };
                    if i != j && q > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Same chain with state labels permuted: new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let m = self.len();
        let states = perm.iter().map(|&p| self.states[p]).collect();
        let observable = perm.iter().map(|&p| self.observable[p]).collect();
        let generator = DMatrix::from_fn(m, m, |i, j| self.generator[(perm[i], perm[j])]);
        Self::from_matrix(states, generator, observable)
    }
}

/// Invariant distribution: the probability vector with `πΛ = 0`.
///
/// Solved as the least-squares problem `[Λᵀ; 1ᵀ] π = [0; 1]` by Householder QR.
pub fn stationary_dist(spec: &ChainSpec) -> Result<Vec<f64>> {
    let m = spec.len();
    let lam = spec.generator();
    let mut a = DMatrix::zeros(m + 1, m);
    a.view_mut((0, 0), (m, m)).copy_from(&lam.transpose());
    a.row_mut(m).fill(1.0);
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = 1.0;

    let qr = a.qr();
    let qtb = qr.q().transpose() * rhs;
    let r = qr.r();
    let pi = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::SolveFailed("stationary system is singular".into()))?;

    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::NotErgodic("invariant vector has a non-positive entry".into()));
    }
    let total: f64 = pi.iter().sum();
    Ok(pi.iter().map(|p| p / total).collect())
}

/// Generator of the space-reversed chain, `Λ̂_ij = π_j Λ_ji / π_i`.
pub fn reversed_generator(spec: &ChainSpec, pi: &[f64]) -> DMatrix<f64> {
    let lam = spec.generator();
    let m = spec.len();
    DMatrix::from_fn(m, m, |i, j| pi[j] * lam[(j, i)] / pi[i])
}

/// Holding rates and cumulative jump distributions of one generator.
#[derive(Debug, Clone)]
struct JumpKernel {
    rates: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
}

impl JumpKernel {
    fn new(generator: &DMatrix<f64>) -> Self {
        let m = generator.nrows();
        let rates: Vec<f64> = (0..m).map(|i| -generator[(i, i)]).collect();
        let cumulative = (0..m)
            .map(|i| {
                let mut acc = 0.0;
                (0..m)
                    .map(|j| {
                        if j != i {
                            acc += generator[(i, j)] / rates[i];
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        Self { rates, cumulative }
    }

    fn holding(&self, state: usize, rng: &mut SimRng) -> f64 {
        let e: f64 = rng.sample(Exp1);
        e / self.rates[state]
    }

    fn next_state(&self, state: usize, rng: &mut SimRng) -> usize {
        let row = &self.cumulative[state];
        let u: f64 = rng.random::<f64>() * row[row.len() - 1];
        // the entry for `state` repeats its predecessor, so it is never selected
        match row.iter().position(|&c| u < c) {
            Some(j) => j,
            None => (0..row.len()).rev().find(|&j| j != state).unwrap(),
        }
    }
}

/// Precomputed sampling tables for a chain; shared by all environment paths
/// realized from the same spec.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    spec: ChainSpec,
    pi: Vec<f64>,
    pi_cumulative: Vec<f64>,
    forward: JumpKernel,
    backward: JumpKernel,
    min_abs_sigma: f64,
    max_abs_sigma: f64,
}

impl ChainSampler {
    pub fn new(spec: &ChainSpec) -> Result<Self> {
        let pi = stationary_dist(spec)?;
        let mut acc = 0.0;
        let pi_cumulative = pi
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let forward = JumpKernel::new(spec.generator());
        let backward = JumpKernel::new(&reversed_generator(spec, &pi));
        let abs: Vec<f64> = spec.states().iter().map(|a| a.abs()).collect();
        Ok(Self {
            spec: spec.clone(),
            pi,
            pi_cumulative,
            forward,
            backward,
            min_abs_sigma: abs.iter().copied().fold(f64::INFINITY, f64::min),
            max_abs_sigma: abs.iter().copied().fold(0.0, f64::max),
        })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        let u: f64 = rng.random::<f64>();
        self.pi_cumulative.iter().position(|&c| u < c).unwrap_or(self.pi.len() - 1)
    }
}

/// Lookup result of [`EnvironmentPath::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvSample {
    pub state: usize,
    pub sigma: f64,
    pub drift: f64,
}

/// One two-sided realization of the environment chain, materialized lazily.
///
/// Forward segments are `[fwd_pos[k], fwd_pos[k+1])` with state `fwd_state[k]`;
/// backward segments are `[bwd_pos[k+1], bwd_pos[k])` with state `bwd_state[k]`.
/// `fwd_state[0] == bwd_state[0]` is the state of the segment covering 0.
/// Materialized segments are never resampled.
#[derive(Debug, Clone)]
pub struct EnvironmentPath {
    sampler: Arc<ChainSampler>,
    fwd_pos: Vec<f64>,
    fwd_state: Vec<usize>,
    bwd_pos: Vec<f64>,
    bwd_state: Vec<usize>,
    fwd_rng: SimRng,
    bwd_rng: SimRng,
    cached: (f64, f64, usize),
}

impl EnvironmentPath {
    pub fn new(sampler: Arc<ChainSampler>, seed: u64) -> Self {
        let mut init = rng::stream(seed, Domain::EnvInitial, 0);
        let mut fwd_rng = rng::stream(seed, Domain::EnvForward, 0);
        let mut bwd_rng = rng::stream(seed, Domain::EnvBackward, 0);
        let s0 = sampler.initial_state(&mut init);
        let right = sampler.forward.holding(s0, &mut fwd_rng);
        let left = sampler.backward.holding(s0, &mut bwd_rng);
        Self {
            fwd_pos: vec![0.0, right],
            fwd_state: vec![s0],
            bwd_pos: vec![0.0, -left],
            bwd_state: vec![s0],
            cached: (-left, right, s0),
            sampler,
            fwd_rng,
            bwd_rng,
        }
    }

    pub fn sampler(&self) -> &ChainSampler {
        &self.sampler
    }

    /// Currently materialized interval `[u_min, u_max)`.
    pub fn realized_range(&self) -> (f64, f64) {
        (*self.bwd_pos.last().unwrap(), *self.fwd_pos.last().unwrap())
    }

    fn extend_forward(&mut self) {
        let last = *self.fwd_state.last().unwrap();
        let next = self.sampler.forward.next_state(last, &mut self.fwd_rng);
        let len = self.sampler.forward.holding(next, &mut self.fwd_rng);
        let end = *self.fwd_pos.last().unwrap() + len;
        self.fwd_state.push(next);
        self.fwd_pos.push(end);
    }

    fn extend_backward(&mut self) {
        let last = *self.bwd_state.last().unwrap();
        let next = self.sampler.backward.next_state(last, &mut self.bwd_rng);
        let len = self.sampler.backward.holding(next, &mut self.bwd_rng);
        let end = *self.bwd_pos.last().unwrap() - len;
        self.bwd_state.push(next);
        self.bwd_pos.push(end);
    }

    /// Makes sure `[lo, hi]` is materialized.
    pub fn ensure(&mut self, lo: f64, hi: f64) {
        while *self.fwd_pos.last().unwrap() <= hi {
            self.extend_forward();
        }
        while *self.bwd_pos.last().unwrap() > lo {
            self.extend_backward();
        }
    }

    /// Segment `(start, end, state)` containing `u`, right-continuous.
    pub fn segment(&mut self, u: f64) -> (f64, f64, usize) {
        let (lo, hi, s) = self.cached;
        if lo <= u && u < hi {
            return (lo, hi, s);
        }
        let seg = if u >= 0.0 {
            while *self.fwd_pos.last().unwrap() <= u {
                self.extend_forward();
            }
            let k = self.fwd_pos.partition_point(|&p| p <= u) - 1;
            let start = if k == 0 { self.bwd_pos[1] } else { self.fwd_pos[k] };
            (start, self.fwd_pos[k + 1], self.fwd_state[k])
        } else {
            while *self.bwd_pos.last().unwrap() > u {
                self.extend_backward();
            }
            let k = self.bwd_pos.partition_point(|&p| p > u) - 1;
            let end = if k == 0 { self.fwd_pos[1] } else { self.bwd_pos[k] };
            (self.bwd_pos[k + 1], end, self.bwd_state[k])
        };
        self.cached = seg;
        seg
    }

    pub fn state_at(&mut self, u: f64) -> usize {
        self.segment(u).2
    }

    /// State index, `σ(u)` and `b(u)` at `u`.
    pub fn eval(&mut self, u: f64) -> EnvSample {
        let state = self.state_at(u);
        let spec = &self.sampler.spec;
        EnvSample { state, sigma: spec.states()[state], drift: spec.observable()[state] }
    }

    /// Forward segments `(start, end, state)` for `u >= 0`, starting at 0.
    pub fn forward_segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.fwd_state
            .iter()
            .enumerate()
            .map(|(k, &s)| (self.fwd_pos[k], self.fwd_pos[k + 1], s))
    }

    /// Backward segments `(start, end, state)` for `u < 0`, ending at 0 and
    /// listed right to left.
    pub fn backward_segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.bwd_state
            .iter()
            .enumerate()
            .map(|(k, &s)| (self.bwd_pos[k + 1], self.bwd_pos[k], s))
    }

    /// Jump positions inside the realized range, increasing.
    pub fn jump_positions(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.bwd_pos[1..self.bwd_pos.len() - 1].iter().rev().copied().collect();
        out.extend_from_slice(&self.fwd_pos[1..self.fwd_pos.len() - 1]);
        out
    }
}

/// Realizes one environment path of `spec` from `seed`.
pub fn realize(spec: &ChainSpec, seed: u64) -> Result<EnvironmentPath> {
    Ok(EnvironmentPath::new(Arc::new(ChainSampler::new(spec)?), seed))
}

/// Deterministic period-1 environment tabulated on a uniform grid; value `k`
/// applies on `[k/n, (k+1)/n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicEnv {
    sigma: Vec<f64>,
    drift: Vec<f64>,
}

impl PeriodicEnv {
    pub fn from_tables(sigma: Vec<f64>, drift: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() || sigma.len() != drift.len() {
            return Err(Error::InvalidEnvironment(format!(
                "sigma and b tables must be nonempty and equally long ({} vs {})",
                sigma.len(),
                drift.len()
            )));
        }
        if let Some((k, s)) = sigma.iter().enumerate().find(|(_, s)| !s.is_finite() || **s == 0.0) {
            return Err(Error::InvalidEnvironment(format!("sigma^2 is not positive at cell {k} (sigma = {s})")));
        }
        if let Some((k, b)) = drift.iter().enumerate().find(|(_, b)| !b.is_finite()) {
            return Err(Error::InvalidEnvironment(format!("b is not finite at cell {k} ({b})")));
        }
        Ok(Self { sigma, drift })
    }

    /// Tabulates `sigma` and `b` at cell midpoints of an `n`-point grid.
    pub fn from_fn(sigma: impl Fn(f64) -> f64, drift: impl Fn(f64) -> f64, n: usize) -> Result<Self> {
        let mid = |k: usize| (k as f64 + 0.5) / n as f64;
        Self::from_tables((0..n).map(|k| sigma(mid(k))).collect(), (0..n).map(|k| drift(mid(k))).collect())
    }

    /// Constant coefficients, the homogenized limit model.
    pub fn constant(sigma: f64, drift: f64) -> Result<Self> {
        Self::from_tables(vec![sigma], vec![drift])
    }

    pub fn resolution(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma_table(&self) -> &[f64] {
        &self.sigma
    }

    pub fn drift_table(&self) -> &[f64] {
        &self.drift
    }

    #[inline]
    pub fn cell(&self, u: f64) -> usize {
        let frac = u - u.floor();
        ((frac * self.sigma.len() as f64) as usize).min(self.sigma.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Chain,
    Periodic,
}

/// Coefficient field seen by the SDE integrators, indexed by the fast
/// coordinate `u = x / ε`.
pub trait Environment {
    /// `(σ(u), b(u))`.
    fn coefficients(&mut self, u: f64) -> (f64, f64);
    /// Smallest and largest `|σ|`.
    fn sigma_range(&self) -> (f64, f64);
    fn kind(&self) -> EnvKind;
}

impl Environment for EnvironmentPath {
    #[inline]
    fn coefficients(&mut self, u: f64) -> (f64, f64) {
        let s = self.state_at(u);
        let spec = &self.sampler.spec;
        (spec.states[s], spec.observable[s])
    }

    fn sigma_range(&self) -> (f64, f64) {
        (self.sampler.min_abs_sigma, self.sampler.max_abs_sigma)
    }

    fn kind(&self) -> EnvKind {
        EnvKind::Chain
    }
}

impl Environment for PeriodicEnv {
    #[inline]
    fn coefficients(&mut self, u: f64) -> (f64, f64) {
        let k = self.cell(u);
        (self.sigma[k], self.drift[k])
    }

    fn sigma_range(&self) -> (f64, f64) {
        let abs = self.sigma.iter().map(|s| s.abs());
        (abs.clone().fold(f64::INFINITY, f64::min), abs.fold(0.0, f64::max))
    }

    fn kind(&self) -> EnvKind {
        EnvKind::Periodic
    }
}

impl<E: Environment + ?Sized> Environment for &mut E {
    fn coefficients(&mut self, u: f64) -> (f64, f64) {
        (**self).coefficients(u)
    }

    fn sigma_range(&self) -> (f64, f64) {
        (**self).sigma_range()
    }

    fn kind(&self) -> EnvKind {
        (**self).kind()
    }
}
