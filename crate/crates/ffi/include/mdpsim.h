#ifndef MDPSIM_H
#define MDPSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes shared by every entry point.
typedef enum MdpsimStatus {
  MDPSIM_STATUS_OK = 0,
  MDPSIM_STATUS_NULL_POINTER = 1,
  // Input rejected by validation (bad generator, parameters, query).
  MDPSIM_STATUS_INVALID_ARGUMENT = 2,
  // A numerical solve failed.
  MDPSIM_STATUS_SOLVE_FAILED = 3,
  // Output buffer too short; the required length was written back.
  MDPSIM_STATUS_BUFFER_TOO_SMALL = 4,
  // Internal panic caught at the boundary.
  MDPSIM_STATUS_PANIC = 5,
} MdpsimStatus;

// Which centered observable to use for the Poisson solve.
typedef enum MdpsimObservable {
  // `(b − 𝐛)/σ²`
  MDPSIM_OBSERVABLE_DRIFT = 0,
  // `1 − 𝐚/σ²`
  MDPSIM_OBSERVABLE_DIFFUSION = 1,
  // Caller-supplied values, centered under the invariant law.
  MDPSIM_OBSERVABLE_RAW = 2,
} MdpsimObservable;

// Path scheme for [`mdpsim_simulate`].
typedef enum MdpsimScheme {
  MDPSIM_SCHEME_EULER = 0,
  // Driftless; `with_drift` must be zero.
  MDPSIM_SCHEME_TIMECHANGE = 1,
} MdpsimScheme;

// Opaque chain environment specification.
typedef struct MdpsimChain MdpsimChain;

// Opaque lazily realized environment path.
typedef struct MdpsimEnvPath MdpsimEnvPath;

// Simulation parameters. `dt <= 0` selects the default `T·1e-4`.
typedef struct MdpsimSimParams {
  double epsilon;
  double kappa;
  double x0;
  double horizon;
  double dt;
  uint64_t seed;
} MdpsimSimParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *mdpsim_last_error(void);

// Builds and validates a chain from `m` states, a row-major `m × m`
// generator and `m` drift values.
//
// # Safety
// `states` and `observable` must point to `m` values, `generator` to `m*m`
// values, and `out` must be a valid pointer.
enum MdpsimStatus mdpsim_chain_new(const double *states,
                                   const double *generator,
                                   const double *observable,
                                   size_t m,
                                   struct MdpsimChain **out);

// Releases a chain; null is ignored.
//
// # Safety
// `chain` must come from [`mdpsim_chain_new`] and not be used afterwards.
void mdpsim_chain_free(struct MdpsimChain *chain);

// Number of states.
//
// # Safety
// `chain` must be a live handle and `out` a valid pointer.
enum MdpsimStatus mdpsim_chain_len(const struct MdpsimChain *chain, size_t *out);

// Invariant distribution into `out[0..cap]`.
//
// # Safety
// `chain` must be a live handle; `out` must hold `cap` values.
enum MdpsimStatus mdpsim_chain_stationary(const struct MdpsimChain *chain, double *out, size_t cap);

// Effective drift and diffusion of a chain environment.
//
// # Safety
// `chain` must be a live handle; `b_eff` and `a_eff` valid pointers.
enum MdpsimStatus mdpsim_chain_homogenize(const struct MdpsimChain *chain,
                                          double *b_eff,
                                          double *a_eff);

// Effective coefficients of a periodic environment given by `n` cell values
// on one period. `quad_error` may be null.
//
// # Safety
// `sigma` and `drift` must point to `n` values; outputs must be valid
// pointers except `quad_error`.
enum MdpsimStatus mdpsim_periodic_homogenize(const double *sigma,
                                             const double *drift,
                                             size_t n,
                                             double *b_eff,
                                             double *a_eff,
                                             double *quad_error);

// Solves the Poisson equation for the chosen observable. Writes the
// corrector `h` and the quadratic-variation density (each `m` values) and
// the jump bound `K`. `raw` is read only for [`MdpsimObservable::Raw`].
//
// # Safety
// `chain` must be a live handle; `raw` must hold `m` values when used;
// `h` and `qv` must hold `cap` values; `jump_bound` may be null.
enum MdpsimStatus mdpsim_chain_poisson(const struct MdpsimChain *chain,
                                       enum MdpsimObservable which,
                                       const double *raw,
                                       double *h,
                                       double *qv,
                                       size_t cap,
                                       double *jump_bound);

// `min(1, 2 exp(−r²/(2q)))`.
//
// # Safety
// `out` must be a valid pointer.
enum MdpsimStatus mdpsim_bound_continuous(double r, double q, double *out);

// `min(1, 2 exp(−r²/(2(Kr + q))))`.
//
// # Safety
// `out` must be a valid pointer.
enum MdpsimStatus mdpsim_bound_jump(double r, double q, double k, double *out);

// Rate of leaving the `η`-tube around the nominal line before `T`.
//
// # Safety
// `out` must be a valid pointer.
enum MdpsimStatus mdpsim_tube_exit_rate(double eta,
                                        double horizon,
                                        double b_eff,
                                        double a_eff,
                                        double *out);

// Rate function of the piecewise-linear path through `(times[i], values[i])`.
//
// # Safety
// `times` and `values` must hold `n` values; `out` must be valid.
enum MdpsimStatus mdpsim_rate_j(const double *times,
                                const double *values,
                                size_t n,
                                double x0,
                                double b_eff,
                                double a_eff,
                                double *out);

// Realizes an environment path (lazily extended on demand).
//
// # Safety
// `chain` must be a live handle and `out` a valid pointer. The path does not
// borrow the chain; the chain may be freed first.
enum MdpsimStatus mdpsim_env_path_new(const struct MdpsimChain *chain,
                                      uint64_t seed,
                                      struct MdpsimEnvPath **out);

// Releases an environment path; null is ignored.
//
// # Safety
// `path` must come from [`mdpsim_env_path_new`] and not be used afterwards.
void mdpsim_env_path_free(struct MdpsimEnvPath *path);

// State index, `σ(u)` and `b(u)`. Any output pointer may be null.
//
// # Safety
// `path` must be a live handle.
enum MdpsimStatus mdpsim_env_path_eval(struct MdpsimEnvPath *path,
                                       double u,
                                       size_t *state,
                                       double *sigma,
                                       double *drift);

// Simulates one path in a fresh environment realized from `env_seed` and
// writes `X` at the `T/dt + 1` grid times. `*len` holds the buffer
// capacity on entry and the number of values on return (also on
// `BufferTooSmall`).
//
// # Safety
// `chain` must be a live handle, `params` and `len` valid pointers and `out`
// must hold `*len` values.
enum MdpsimStatus mdpsim_simulate(const struct MdpsimChain *chain,
                                  const struct MdpsimSimParams *params,
                                  enum MdpsimScheme scheme,
                                  bool with_drift,
                                  uint64_t env_seed,
                                  double *out,
                                  size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDPSIM_H */
