//! Poisson decomposition along environment paths and exponential tail bounds
//! for martingales with bounded jumps.

use std::sync::Arc;

use serde::Serialize;

use crate::chain_algebra::{solve_poisson, CenteredObservable, PoissonDecomposition};
use crate::env::{ChainSampler, ChainSpec, EnvironmentPath};
use crate::error::{Error, Result};
use crate::parallel::{map_replicas, Threads};
use crate::rng;
use crate::stats::{clopper_pearson_lower, clopper_pearson_upper};

/// One-sided significance used for tail-bound violation tests.
pub const TAIL_ALPHA: f64 = 0.01;

/// Additive functional `∫₀ᵗ f(σ(s)) ds` split as `V_t − V_0 − M_t`, sampled at
/// 0, at every environment jump in `(0, U]` (right limits) and at `U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionSample {
    pub times: Vec<f64>,
    pub integral: Vec<f64>,
    pub v: Vec<f64>,
    /// `M_t` defined by the decomposition identity.
    pub m: Vec<f64>,
    /// `h·N_t` with `N_t = I(t) − I(0) − ∫ Λᵀ I(s) ds`, computed from `Λh` rather than `f`.
    pub m_compensated: Vec<f64>,
    /// `⟨M⟩_t = ∫₀ᵗ m(σ(s)) ds`.
    pub qv: Vec<f64>,
    /// `sup_{t ≤ U} |M_t|`, exact because `M` is linear between jumps.
    pub sup_abs_m: f64,
    /// Largest `|ΔM|` observed.
    pub max_jump: f64,
}

impl DecompositionSample {
    pub fn terminal_m(&self) -> f64 {
        *self.m.last().unwrap()
    }

    pub fn terminal_qv(&self) -> f64 {
        *self.qv.last().unwrap()
    }

    /// Largest relative gap between `M` from the identity and `h·N`.
    pub fn identity_residual(&self) -> f64 {
        self.m
            .iter()
            .zip(&self.m_compensated)
            .zip(&self.integral)
            .map(|((a, b), i)| (a - b).abs() / (1.0 + a.abs().max(i.abs())))
            .fold(0.0, f64::max)
    }
}

/// Everything needed to sample decompositions repeatedly for one observable.
#[derive(Debug, Clone)]
pub struct DecompositionSetup {
    sampler: Arc<ChainSampler>,
    f: Vec<f64>,
    lambda_h: Vec<f64>,
    pub poisson: PoissonDecomposition,
}

impl DecompositionSetup {
    pub fn new(spec: &ChainSpec, f: &CenteredObservable) -> Result<Self> {
        let poisson = solve_poisson(spec, f)?;
        let m = spec.len();
        let lam = spec.generator();
        let lambda_h = (0..m).map(|i| (0..m).map(|j| lam[(i, j)] * poisson.h[j]).sum()).collect();
        Ok(Self { sampler: Arc::new(ChainSampler::new(spec)?), f: f.values().to_vec(), lambda_h, poisson })
    }

    pub fn stationary(&self) -> &[f64] {
        self.sampler.stationary()
    }

    /// Builds the decomposition along the environment realized from `seed`.
    pub fn sample(&self, horizon: f64, seed: u64) -> DecompositionSample {
        let mut path = EnvironmentPath::new(self.sampler.clone(), seed);
        path.ensure(0.0, horizon);
        let h = &self.poisson.h;
        let qv_rate = &self.poisson.qv_density;

        let s0 = path.state_at(0.0);
        let v0 = h[s0];
        let mut out = DecompositionSample {
            times: vec![0.0],
            integral: vec![0.0],
            v: vec![v0],
            m: vec![0.0],
            m_compensated: vec![0.0],
            qv: vec![0.0],
            sup_abs_m: 0.0,
            max_jump: 0.0,
        };
        let (mut integral, mut compensator, mut qv) = (0.0, 0.0, 0.0);
        let mut sup: f64 = 0.0;
        let mut max_jump: f64 = 0.0;
        let segments: Vec<(f64, f64, usize)> = path.forward_segments().collect();
        for (start, end, s) in segments {
            if start >= horizon {
                break;
            }
            let stop = end.min(horizon);
            let len = stop - start;
            integral += self.f[s] * len;
            compensator += self.lambda_h[s] * len;
            qv += qv_rate[s] * len;
            // left limit at `stop`
            let m_left = h[s] - v0 - integral;
            sup = sup.max(m_left.abs());
            let (state_after, t) = if end <= horizon { (path.state_at(end), end) } else { (s, horizon) };
            let v = h[state_after];
            let m = v - v0 - integral;
            max_jump = max_jump.max((m - m_left).abs());
            sup = sup.max(m.abs());
            out.times.push(t);
            out.integral.push(integral);
            out.v.push(v);
            out.m.push(m);
            out.m_compensated.push(v - v0 - compensator);
            out.qv.push(qv);
            if end >= horizon {
                break;
            }
        }
        out.sup_abs_m = sup;
        out.max_jump = max_jump;
        out
    }
}

/// Samples the decomposition of `f` along one environment path on `[0, U]`.
pub fn sample_decomposition(spec: &ChainSpec, f: &CenteredObservable, horizon: f64, seed: u64) -> Result<DecompositionSample> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidQuery(format!("horizon must be positive, got {horizon}")));
    }
    Ok(DecompositionSetup::new(spec, f)?.sample(horizon, seed))
}

/// `P(sup|M| ≥ r, ⟨M⟩ ≤ q)` query for a martingale with jumps bounded by `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBoundQuery {
    pub r: f64,
    pub q: f64,
    pub k: f64,
}

impl TailBoundQuery {
    pub fn new(r: f64, q: f64, k: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidQuery(format!("r and q must be positive (r = {r}, q = {q})")));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::InvalidQuery(format!("K must be nonnegative (K = {k})")));
        }
        Ok(Self { r, q, k })
    }

    pub fn bound(&self) -> f64 {
        (2.0 * (-self.r * self.r / (2.0 * (self.k * self.r + self.q))).exp()).min(1.0)
    }
}

/// Continuous-martingale bound `min(1, 2 exp(−r²/(2q)))`.
pub fn bound_continuous(r: f64, q: f64) -> Result<f64> {
    let query = TailBoundQuery::new(r, q, 0.0)?;
    Ok((2.0 * (-query.r * query.r / (2.0 * query.q)).exp()).min(1.0))
}

/// Bounded-jump bound `min(1, 2 exp(−r²/(2(K r + q))))`.
pub fn bound_jump(r: f64, q: f64, k: f64) -> Result<f64> {
    Ok(TailBoundQuery::new(r, q, k)?.bound())
}

/// One cell of an empirical tail table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCell {
    pub r: f64,
    pub q: f64,
    pub k: f64,
    pub n: u64,
    pub hits: u64,
    pub freq: f64,
    /// One-sided 99% Clopper–Pearson upper limit of the frequency.
    pub ucl99: f64,
    /// One-sided 99% Clopper–Pearson lower limit of the frequency.
    pub lcl99: f64,
    pub bound: f64,
    /// Lower confidence limit exceeds the bound.
    pub violated: bool,
}

/// `(sup_{t≤U} |M_t|, ⟨M⟩_U)` for `n` independent environment paths.
pub fn tail_samples(setup: &DecompositionSetup, horizon: f64, n: u64, seed: u64, threads: Threads) -> Vec<(f64, f64)> {
    map_replicas(n, threads, |i| {
        let s = setup.sample(horizon, rng::replica_seed(seed, 0, i));
        (s.sup_abs_m, s.terminal_qv())
    })
}

pub fn tail_cell(samples: &[(f64, f64)], r: f64, q: f64, k: f64) -> Result<TailCell> {
    let query = TailBoundQuery::new(r, q, k)?;
    let n = samples.len() as u64;
    let hits = samples.iter().filter(|(sup, qv)| *sup >= r && *qv <= q).count() as u64;
    let bound = query.bound();
    let lcl99 = clopper_pearson_lower(hits, n, TAIL_ALPHA);
    Ok(TailCell {
        r,
        q,
        k,
        n,
        hits,
        freq: hits as f64 / n as f64,
        ucl99: clopper_pearson_upper(hits, n, TAIL_ALPHA),
        lcl99,
        bound,
        violated: lcl99 > bound,
    })
}

/// Monte Carlo frequency of `{sup_{t≤U}|M_t| ≥ r, ⟨M⟩_U ≤ q}` next to the
/// bounded-jump bound with `K` from the Poisson solve.
pub fn empirical_tail(
    spec: &ChainSpec,
    f: &CenteredObservable,
    horizon: f64,
    r: f64,
    q: f64,
    n_replicas: u64,
    seed: u64,
) -> Result<TailCell> {
    Ok(empirical_tail_grid(spec, f, horizon, &[r], &[q], n_replicas, seed, Threads::default())?.remove(0))
}

/// Evaluates every `(r, q)` cell on the same set of replicas.
#[allow(clippy::too_many_arguments)]
pub fn empirical_tail_grid(
    spec: &ChainSpec,
    f: &CenteredObservable,
    horizon: f64,
    rs: &[f64],
    qs: &[f64],
    n_replicas: u64,
    seed: u64,
    threads: Threads,
) -> Result<Vec<TailCell>> {
    if !(horizon > 0.0) || n_replicas == 0 {
        return Err(Error::InvalidQuery("horizon and replica count must be positive".into()));
    }
    let setup = DecompositionSetup::new(spec, f)?;
    let samples = tail_samples(&setup, horizon, n_replicas, seed, threads);
    let k = setup.poisson.jump_bound;
    let mut cells = Vec::with_capacity(rs.len() * qs.len());
    for &r in rs {
        for &q in qs {
            cells.push(tail_cell(&samples, r, q, k)?);
        }
    }
    Ok(cells)
}
