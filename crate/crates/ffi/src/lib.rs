//! C ABI over `mdpsim`.
//!
//! Conventions:
//! * every function returns an [`MdpsimStatus`]; results go through out-pointers;
//! * on failure a message is available from [`mdpsim_last_error`] on the same thread;
//! * arrays are passed as pointer + length, matrices row-major;
//! * handles are created by `*_new` and released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use mdpsim::chain_algebra::{diffusion_theta, drift_theta, solve_poisson, CenteredObservable};
use mdpsim::env::{stationary_dist, ChainSampler, ChainSpec, EnvKind, EnvironmentPath, PeriodicEnv};
use mdpsim::homogenize::{homogenize_chain, homogenize_periodic, HomogenizedCoefficients};
use mdpsim::martingale::{bound_continuous, bound_jump};
use mdpsim::mdp::{rate_j, tube_exit_rate, RatePath};
use mdpsim::sde::{simulate_euler, simulate_timechange, SimulationParams};

/// Status codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdpsimStatus {
    Ok = 0,
    NullPointer = 1,
    /// Input rejected by validation (bad generator, parameters, query).
    InvalidArgument = 2,
    /// A numerical solve failed.
    SolveFailed = 3,
    /// Output buffer too short; the required length was written back.
    BufferTooSmall = 4,
    /// Internal panic caught at the boundary.
    Panic = 5,
}

/// Which centered observable to use for the Poisson solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdpsimObservable {
    /// `(b − 𝐛)/σ²`
    Drift = 0,
    /// `1 − 𝐚/σ²`
    Diffusion = 1,
    /// Caller-supplied values, centered under the invariant law.
    Raw = 2,
}

/// Opaque chain environment specification.
pub struct MdpsimChain {
    spec: ChainSpec,
    sampler: Arc<ChainSampler>,
}

/// Opaque lazily realized environment path.
pub struct MdpsimEnvPath {
    path: EnvironmentPath,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: MdpsimStatus, msg: impl Into<String>) -> MdpsimStatus {
    set_error(msg);
    status
}

fn from_core(err: mdpsim::Error) -> MdpsimStatus {
    let status = if err.is_validation() { MdpsimStatus::InvalidArgument } else { MdpsimStatus::SolveFailed };
    fail(status, err.to_string())
}

fn guard(op: impl FnOnce() -> MdpsimStatus) -> MdpsimStatus {
    match catch_unwind(AssertUnwindSafe(op)) {
        Ok(status) => {
            if status == MdpsimStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(MdpsimStatus::Panic, "internal panic"),
    }
}

/// Reads `len` values; `ptr` may be null only when `len == 0`.
unsafe fn slice<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn write(out: *mut f64, value: f64) -> MdpsimStatus {
    if out.is_null() {
        return fail(MdpsimStatus::NullPointer, "output pointer is null");
    }
    *out = value;
    MdpsimStatus::Ok
}

unsafe fn write_all(out: *mut f64, cap: usize, values: &[f64]) -> MdpsimStatus {
    if cap < values.len() {
        return fail(MdpsimStatus::BufferTooSmall, format!("buffer holds {cap} values, {} needed", values.len()));
    }
    if values.is_empty() {
        return MdpsimStatus::Ok;
    }
    if out.is_null() {
        return fail(MdpsimStatus::NullPointer, "output pointer is null");
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    MdpsimStatus::Ok
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mdpsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds and validates a chain from `m` states, a row-major `m × m`
/// generator and `m` drift values.
///
/// # Safety
/// `states` and `observable` must point to `m` values, `generator` to `m*m`
/// values, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_chain_new(
    states: *const f64,
    generator: *const f64,
    observable: *const f64,
    m: usize,
    out: *mut *mut MdpsimChain,
) -> MdpsimStatus {
    guard(|| {
        if out.is_null() {
            return fail(MdpsimStatus::NullPointer, "output handle pointer is null");
        }
        *out = ptr::null_mut();
        let (Some(s), Some(g), Some(o)) = (slice(states, m), slice(generator, m * m), slice(observable, m)) else {
            return fail(MdpsimStatus::NullPointer, "input array is null");
        };
        let rows = g.chunks(m.max(1)).map(<[f64]>::to_vec).collect();
        let spec = match ChainSpec::new(s.to_vec(), rows, o.to_vec()) {
            Ok(spec) => spec,
            Err(e) => return from_core(e),
        };
        let sampler = match ChainSampler::new(&spec) {
            Ok(s) => Arc::new(s),
            Err(e) => return from_core(e),
        };
        *out = Box::into_raw(Box::new(MdpsimChain { spec, sampler }));
        MdpsimStatus::Ok
    })
}

/// Releases a chain; null is ignored.
///
/// # Safety
/// `chain` must come from [`mdpsim_chain_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_chain_free(chain: *mut MdpsimChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of states.
///
/// # Safety
/// `chain` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_chain_len(chain: *const MdpsimChain, out: *mut usize) -> MdpsimStatus {
    guard(|| {
        if chain.is_null() || out.is_null() {
            return fail(MdpsimStatus::NullPointer, "null argument");
        }
        *out = (*chain).spec.len();
        MdpsimStatus::Ok
    })
}

/// Invariant distribution into `out[0..cap]`.
///
/// # Safety
/// `chain` must be a live handle; `out` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_chain_stationary(chain: *const MdpsimChain, out: *mut f64, cap: usize) -> MdpsimStatus {
    guard(|| {
        if chain.is_null() {
            return fail(MdpsimStatus::NullPointer, "chain handle is null");
        }
        match stationary_dist(&(*chain).spec) {
            Ok(pi) => write_all(out, cap, &pi),
            Err(e) => from_core(e),
        }
    })
}

/// Effective drift and diffusion of a chain environment.
///
/// # Safety
/// `chain` must be a live handle; `b_eff` and `a_eff` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_chain_homogenize(chain: *const MdpsimChain, b_eff: *mut f64, a_eff: *mut f64) -> MdpsimStatus {
    guard(|| {
        if chain.is_null() || b_eff.is_null() || a_eff.is_null() {
            return fail(MdpsimStatus::NullPointer, "null argument");
        }
        match homogenize_chain(&(*chain).spec) {
            Ok(c) => {
                *b_eff = c.b_eff;
                *a_eff = c.a_eff;
                MdpsimStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Effective coefficients of a periodic environment given by `n` cell values
/// on one period. `quad_error` may be null.
///
/// # Safety
/// `sigma` and `drift` must point to `n` values; outputs must be valid
/// pointers except `quad_error`.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_periodic_homogenize(
    sigma: *const f64,
    drift: *const f64,
    n: usize,
    b_eff: *mut f64,
    a_eff: *mut f64,
    quad_error: *mut f64,
) -> MdpsimStatus {
    guard(|| {
        let (Some(s), Some(d)) = (slice(sigma, n), slice(drift, n)) else {
            return fail(MdpsimStatus::NullPointer, "input array is null");
        };
        if b_eff.is_null() || a_eff.is_null() {
            return fail(MdpsimStatus::NullPointer, "output pointer is null");
        }
        let env = match PeriodicEnv::from_tables(s.to_vec(), d.to_vec()) {
            Ok(env) => env,
            Err(e) => return from_core(e),
        };
        match homogenize_periodic(&env) {
            Ok(c) => {
                *b_eff = c.b_eff;
                *a_eff = c.a_eff;
                if !quad_error.is_null() {
                    *quad_error = c.quadrature_error.unwrap_or(0.0);
                }
                MdpsimStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Solves the Poisson equation for the chosen observable. Writes the
/// corrector `h` and the quadratic-variation density (each `m` values) and
/// the jump bound `K`. `raw` is read only for [`MdpsimObservable::Raw`].
///
/// # Safety
/// `chain` must be a live handle; `raw` must hold `m` values when used;
/// `h` and `qv` must hold `cap` values; `jump_bound` may be null.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_chain_poisson(
    chain: *const MdpsimChain,
    which: MdpsimObservable,
    raw: *const f64,
    h: *mut f64,
    qv: *mut f64,
    cap: usize,
    jump_bound: *mut f64,
) -> MdpsimStatus {
    guard(|| {
        if chain.is_null() {
            return fail(MdpsimStatus::NullPointer, "chain handle is null");
        }
        let spec = &(*chain).spec;
        let f = match which {
            MdpsimObservable::Drift => drift_theta(spec),
            MdpsimObservable::Diffusion => diffusion_theta(spec),
            MdpsimObservable::Raw => match slice(raw, spec.len()) {
                Some(values) => CenteredObservable::from_raw(spec, values),
                None => return fail(MdpsimStatus::NullPointer, "raw observable is null"),
            },
        };
        let dec = match f.and_then(|f| solve_poisson(spec, &f)) {
            Ok(d) => d,
            Err(e) => return from_core(e),
        };
        let status = write_all(h, cap, &dec.h);
        if status != MdpsimStatus::Ok {
            return status;
        }
        let status = write_all(qv, cap, &dec.qv_density);
        if status != MdpsimStatus::Ok {
            return status;
        }
        if !jump_bound.is_null() {
            *jump_bound = dec.jump_bound;
        }
        MdpsimStatus::Ok
    })
}

/// `min(1, 2 exp(−r²/(2q)))`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_bound_continuous(r: f64, q: f64, out: *mut f64) -> MdpsimStatus {
    guard(|| match bound_continuous(r, q) {
        Ok(v) => write(out, v),
        Err(e) => from_core(e),
    })
}

/// `min(1, 2 exp(−r²/(2(Kr + q))))`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_bound_jump(r: f64, q: f64, k: f64, out: *mut f64) -> MdpsimStatus {
    guard(|| match bound_jump(r, q, k) {
        Ok(v) => write(out, v),
        Err(e) => from_core(e),
    })
}

fn coefficients(b_eff: f64, a_eff: f64) -> HomogenizedCoefficients {
    HomogenizedCoefficients { b_eff, a_eff, kind: EnvKind::Chain, quadrature_error: None }
}

/// Rate of leaving the `η`-tube around the nominal line before `T`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_tube_exit_rate(eta: f64, horizon: f64, b_eff: f64, a_eff: f64, out: *mut f64) -> MdpsimStatus {
    guard(|| match tube_exit_rate(eta, horizon, &coefficients(b_eff, a_eff)) {
        Ok(v) => write(out, v),
        Err(e) => from_core(e),
    })
}

/// Rate function of the piecewise-linear path through `(times[i], values[i])`.
///
/// # Safety
/// `times` and `values` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_rate_j(
    times: *const f64,
    values: *const f64,
    n: usize,
    x0: f64,
    b_eff: f64,
    a_eff: f64,
    out: *mut f64,
) -> MdpsimStatus {
    guard(|| {
        let (Some(t), Some(v)) = (slice(times, n), slice(values, n)) else {
            return fail(MdpsimStatus::NullPointer, "input array is null");
        };
        match RatePath::new(t.to_vec(), v.to_vec(), x0) {
            Ok(path) => write(out, rate_j(&path, &coefficients(b_eff, a_eff))),
            Err(e) => from_core(e),
        }
    })
}

/// Realizes an environment path (lazily extended on demand).
///
/// # Safety
/// `chain` must be a live handle and `out` a valid pointer. The path does not
/// borrow the chain; the chain may be freed first.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_env_path_new(chain: *const MdpsimChain, seed: u64, out: *mut *mut MdpsimEnvPath) -> MdpsimStatus {
    guard(|| {
        if chain.is_null() || out.is_null() {
            return fail(MdpsimStatus::NullPointer, "null argument");
        }
        let path = EnvironmentPath::new((*chain).sampler.clone(), seed);
        *out = Box::into_raw(Box::new(MdpsimEnvPath { path }));
        MdpsimStatus::Ok
    })
}

/// Releases an environment path; null is ignored.
///
/// # Safety
/// `path` must come from [`mdpsim_env_path_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_env_path_free(path: *mut MdpsimEnvPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// State index, `σ(u)` and `b(u)`. Any output pointer may be null.
///
/// # Safety
/// `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_env_path_eval(
    path: *mut MdpsimEnvPath,
    u: f64,
    state: *mut usize,
    sigma: *mut f64,
    drift: *mut f64,
) -> MdpsimStatus {
    guard(|| {
        if path.is_null() {
            return fail(MdpsimStatus::NullPointer, "path handle is null");
        }
        if !u.is_finite() {
            return fail(MdpsimStatus::InvalidArgument, format!("position must be finite, got {u}"));
        }
        let s = (*path).path.eval(u);
        if !state.is_null() {
            *state = s.state;
        }
        if !sigma.is_null() {
            *sigma = s.sigma;
        }
        if !drift.is_null() {
            *drift = s.drift;
        }
        MdpsimStatus::Ok
    })
}

/// Simulation parameters. `dt <= 0` selects the default `T·1e-4`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MdpsimSimParams {
    pub epsilon: f64,
    pub kappa: f64,
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Path scheme for [`mdpsim_simulate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdpsimScheme {
    Euler = 0,
    /// Driftless; `with_drift` must be zero.
    Timechange = 1,
}

/// Simulates one path in a fresh environment realized from `env_seed` and
/// writes `X` at the `T/dt + 1` grid times. `*len` holds the buffer
/// capacity on entry and the number of values on return (also on
/// `BufferTooSmall`).
///
/// # Safety
/// `chain` must be a live handle, `params` and `len` valid pointers and `out`
/// must hold `*len` values.
#[no_mangle]
pub unsafe extern "C" fn mdpsim_simulate(
    chain: *const MdpsimChain,
    params: *const MdpsimSimParams,
    scheme: MdpsimScheme,
    with_drift: bool,
    env_seed: u64,
    out: *mut f64,
    len: *mut usize,
) -> MdpsimStatus {
    guard(|| {
        if chain.is_null() || params.is_null() || len.is_null() {
            return fail(MdpsimStatus::NullPointer, "null argument");
        }
        let p = *params;
        let built = SimulationParams::new(p.epsilon, p.kappa, p.x0, p.horizon)
            .and_then(|s| if p.dt > 0.0 { s.with_dt(p.dt) } else { Ok(s) })
            .map(|s| s.with_seed(p.seed));
        let sp = match built {
            Ok(sp) => sp,
            Err(e) => return from_core(e),
        };
        let needed = sp.steps() + 1;
        let cap = *len;
        *len = needed;
        if cap < needed {
            return fail(MdpsimStatus::BufferTooSmall, format!("buffer holds {cap} values, {needed} needed"));
        }
        let mut env = EnvironmentPath::new((*chain).sampler.clone(), env_seed);
        let path = match scheme {
            MdpsimScheme::Euler => simulate_euler(&sp, &mut env, with_drift),
            MdpsimScheme::Timechange if with_drift => {
                return fail(MdpsimStatus::InvalidArgument, "the time-change scheme produces driftless paths")
            }
            MdpsimScheme::Timechange => simulate_timechange(&sp, &mut env),
        };
        match path {
            Ok(path) => write_all(out, cap, &path.values),
            Err(e) => from_core(e),
        }
    })
}
