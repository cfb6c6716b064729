//! Poisson equation and quadratic-variation density for the environment chain.
//!
//! For a centered observable `f` (`Σ f_i π_i = 0`) the solution `h` of
//! `Λh = f` normalized by `h·π = 0` gives the decomposition
//! `∫₀ᵗ f(σ(s)) ds = V_t − V_0 − M_t` with `V_t = h(σ(t))` and a pure-jump
//! martingale `M` whose jumps are bounded by `K = max |h_j − h_i|` and whose
//! predictable quadratic variation has density `m(σ(t))`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::env::{stationary_dist, ChainSpec};
use crate::error::{Error, Result};

/// Residual tolerance accepted from the Poisson solve.
pub const POISSON_TOL: f64 = 1e-10;

/// Per-state observable with zero mean under the invariant distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenteredObservable {
    values: Vec<f64>,
    centering: f64,
}

impl CenteredObservable {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The constant `c` subtracted from the raw values.
    pub fn centering(&self) -> f64 {
        self.centering
    }

    /// Centers `raw` with unit weights: `f_i = raw_i − Σ raw_j π_j`.
    pub fn from_raw(spec: &ChainSpec, raw: &[f64]) -> Result<Self> {
        center(spec, raw, &vec![1.0; raw.len()])
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Weighted centering: `f_i = w_i (ψ_i − c)` with `c = Σ π w ψ / Σ π w`.
///
/// With `ψ = g(a)`, `w = 1/a²` this is the drift process `(b − 𝐛)/σ²`;
/// with `ψ = a²`, `w = 1/a²` it is `1 − 𝐚/σ²`.
pub fn center(spec: &ChainSpec, raw: &[f64], weights: &[f64]) -> Result<CenteredObservable> {
    let m = spec.len();
    if raw.len() != m || weights.len() != m {
        return Err(Error::InvalidQuery(format!(
            "observable needs {m} values and {m} weights, got {} and {}",
            raw.len(),
            weights.len()
        )));
    }
    let pi = stationary_dist(spec)?;
    let num: f64 = (0..m).map(|i| pi[i] * weights[i] * raw[i]).sum();
    let den: f64 = (0..m).map(|i| pi[i] * weights[i]).sum();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::InvalidQuery("weights have zero mean under π".into()));
    }
    let c = num / den;
    let values = (0..m).map(|i| weights[i] * (raw[i] - c)).collect();
    Ok(CenteredObservable { values, centering: c })
}

/// `θ = (b − 𝐛)/σ²` per state.
pub fn drift_theta(spec: &ChainSpec) -> Result<CenteredObservable> {
    let w: Vec<f64> = spec.states().iter().map(|a| 1.0 / (a * a)).collect();
    center(spec, spec.observable(), &w)
}

/// `θ = 1 − 𝐚/σ²` per state.
pub fn diffusion_theta(spec: &ChainSpec) -> Result<CenteredObservable> {
    let sq: Vec<f64> = spec.states().iter().map(|a| a * a).collect();
    let w: Vec<f64> = sq.iter().map(|s| 1.0 / s).collect();
    center(spec, &sq, &w)
}

/// Solution of the Poisson equation with the constants derived from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonDecomposition {
    /// `Λh = f`, `h·π = 0`.
    pub h: Vec<f64>,
    /// Bound on jumps of `M`: `max_{i,j} |h_j − h_i|`.
    pub jump_bound: f64,
    /// Quadratic-variation density per state.
    pub qv_density: Vec<f64>,
    /// Bound on `|V_t|`: `max_i |h_i|`.
    pub v_bound: f64,
}

impl PoissonDecomposition {
    /// Upper bound on `d⟨M⟩_t / dt`.
    pub fn qv_bound(&self) -> f64 {
        self.qv_density.iter().copied().fold(0.0, f64::max)
    }

    /// Long-run mean `Σ π_i m_i`, the asymptotic variance rate of `M`.
    pub fn mean_qv_rate(&self, pi: &[f64]) -> f64 {
        self.qv_density.iter().zip(pi).map(|(m, p)| m * p).sum()
    }
}

/// Solves `Λh = f` in the class `h·π = 0` through the augmented least-squares
/// system `[Λ; πᵀ] h = [f; 0]`.
pub fn solve_poisson(spec: &ChainSpec, f: &CenteredObservable) -> Result<PoissonDecomposition> {
    let m = spec.len();
    if f.values.len() != m {
        return Err(Error::InvalidQuery(format!("observable has {} values for {m} states", f.values.len())));
    }
    let pi = stationary_dist(spec)?;
    let lam = spec.generator();

    let h: Vec<f64> = if f.is_zero() {
        vec![0.0; m]
    } else {
        let mut a = DMatrix::zeros(m + 1, m);
        a.view_mut((0, 0), (m, m)).copy_from(lam);
        for j in 0..m {
            a[(m, j)] = pi[j];
        }
        let mut rhs = DVector::zeros(m + 1);
        for i in 0..m {
            rhs[i] = f.values[i];
        }
        let qr = a.qr();
        let qtb = qr.q().transpose() * rhs;
        let sol = qr
            .r()
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::SolveFailed("augmented Poisson system is singular".into()))?;
        sol.iter().copied().collect()
    };

    let scale = 1.0 + f.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let residual = (0..m)
        .map(|i| ((0..m).map(|j| lam[(i, j)] * h[j]).sum::<f64>() - f.values[i]).abs())
        .fold(0.0, f64::max);
    if !(residual <= POISSON_TOL * scale) {
        return Err(Error::SolveFailed(format!("Poisson residual {residual:e} exceeds tolerance")));
    }

    let jump_bound = {
        let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    let v_bound = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let qv_density = qv_density(spec, &h);
    Ok(PoissonDecomposition { h, jump_bound, qv_density, v_bound })
}

/// `m_i = h·(diag(Λᵀe_i) − [e_i e_iᵀ Λ + Λᵀ e_i e_iᵀ])·h` for each state `i`.
pub fn qv_density(spec: &ChainSpec, h: &[f64]) -> Vec<f64> {
    let m = spec.len();
    let lam = spec.generator();
    let hv = DVector::from_column_slice(h);
    (0..m)
        .map(|i| {
            let e = DVector::from_fn(m, |k, _| if k == i { 1.0 } else { 0.0 });
            let lt_e = lam.transpose() * &e;
            let outer = &e * e.transpose();
            let integrand = DMatrix::from_diagonal(&lt_e) - (&outer * lam + lam.transpose() * &outer);
            hv.dot(&(integrand * &hv))
        })
        .collect()
}
