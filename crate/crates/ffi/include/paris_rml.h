#ifndef PARIS_RML_H
#define PARIS_RML_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PRML_ALGORITHM_PARIS 0

#define PRML_ALGORITHM_QUADRATIC 1

/**
 * Result code of every fallible call.
 */
typedef enum PrmlStatus {
  PRML_STATUS_OK = 0,
  PRML_STATUS_NULL_POINTER = 1,
  PRML_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A parameter lies outside the model's domain.
   */
  PRML_STATUS_DOMAIN = 3,
  /**
   * Weight collapse or a degenerate backward kernel (unguarded runs only).
   */
  PRML_STATUS_DEGENERATE = 4,
  /**
   * A non-finite score or parameter update.
   */
  PRML_STATUS_NON_FINITE = 5,
  /**
   * The handle is unusable after an earlier failure.
   */
  PRML_STATUS_INVALID_STATE = 6,
  /**
   * A caller-supplied buffer is too small.
   */
  PRML_STATUS_BUFFER_TOO_SMALL = 7,
  PRML_STATUS_INTERNAL = 8,
  PRML_STATUS_PANIC = 9,
} PrmlStatus;

/**
 * Opaque estimator handle.
 */
typedef struct PrmlEstimator PrmlEstimator;

/**
 * Estimator settings. Fill with [`prml_options_default`] before editing.
 */
typedef struct PrmlOptions {
  /**
   * `PRML_ALGORITHM_PARIS` or `PRML_ALGORITHM_QUADRATIC`.
   */
  uint32_t algorithm;
  size_t particles;
  /**
   * Backward draws per particle (PaRIS only).
   */
  size_t backward_draws;
  /**
   * Accept-reject proposals per draw before the exact fallback.
   */
  size_t rejection_cap;
  double gamma0;
  double alpha;
  /**
   * Lower bound on the variance parameters.
   */
  double param_floor;
  /**
   * Observation coefficient of the linear-Gaussian model.
   */
  double obs_coef;
  /**
   * Skip and flag degenerate steps instead of failing.
   */
  bool guard;
  /**
   * No guard, emission-only first additive term, degeneracy is an error.
   */
  bool paper_fidelity;
} PrmlOptions;

/**
 * Outcome of one push.
 */
typedef struct PrmlStep {
  /**
   * False for the first observation, which only primes the filter.
   */
  bool updated;
  /**
   * The update was skipped because of a guarded degeneracy.
   */
  bool skipped;
  /**
   * Time index of the parameter after this push.
   */
  uint64_t t;
  double gamma;
} PrmlStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null after a success. The
 * pointer stays valid until the next call on the same thread.
 */
const char *prml_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *prml_version(void);

/**
 * Writes the default settings to `out`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum PrmlStatus prml_options_default(struct PrmlOptions *out);

/**
 * Creates an estimator for model `model_id` (`"sv"` or `"lgssm"`) started at
 * `theta0[0..dim]`. `options` may be null for the defaults.
 *
 * # Safety
 * `model_id` must be null or a NUL-terminated string; `theta0` must be null
 * or valid for `dim` reads; `options` must be null or valid; `out` must be
 * null or valid for writes.
 */
enum PrmlStatus prml_estimator_new(const char *model_id,
                                   const double *theta0,
                                   size_t dim,
                                   const struct PrmlOptions *options,
                                   uint64_t seed,
                                   struct PrmlEstimator **out);

/**
 * Feeds one observation. `step` may be null.
 *
 * # Safety
 * `est` must be null or a live handle not used concurrently; `step` must be
 * null or valid for writes.
 */
enum PrmlStatus prml_estimator_push(struct PrmlEstimator *est, double y, struct PrmlStep *step);

/**
 * Number of parameter components, or 0 for a null handle.
 *
 * # Safety
 * `est` must be null or a live handle.
 */
size_t prml_estimator_dim(const struct PrmlEstimator *est);

/**
 * Copies the current parameter into `out[0..len]`; `len` must be at least
 * the model dimension.
 *
 * # Safety
 * `est` must be null or a live handle; `out` must be null or valid for `len`
 * writes.
 */
enum PrmlStatus prml_estimator_theta(const struct PrmlEstimator *est, double *out, size_t len);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `est` must be null or a handle from [`prml_estimator_new`] not yet freed.
 */
void prml_estimator_free(struct PrmlEstimator *est);

/**
 * Simulates the stochastic-volatility model at `theta[0..3]` for `steps`
 * transitions, writing `steps + 1` observations to `y` and, when `x` is not
 * null, the hidden states to `x`. `len` is the capacity of each buffer.
 *
 * # Safety
 * `theta` must be null or valid for 3 reads; `y` (and `x` if not null) must
 * be valid for `len` writes.
 */
enum PrmlStatus prml_sv_simulate(const double *theta,
                                 size_t steps,
                                 uint64_t seed,
                                 double *y,
                                 double *x,
                                 size_t len);

/**
 * Exact log-likelihood and its gradient in `(phi, sigma2, beta2)` for the
 * linear-Gaussian model with observation coefficient `obs_coef`, started from
 * the stationary law. `loglik` and `score` (3 values) may each be null.
 *
 * # Safety
 * `y` must be null or valid for `n` reads; `loglik` must be null or valid for
 * a write; `score` must be null or valid for 3 writes.
 */
enum PrmlStatus prml_kalman_score(double phi,
                                  double sigma2,
                                  double obs_coef,
                                  double beta2,
                                  const double *y,
                                  size_t n,
                                  double *loglik,
                                  double *score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARIS_RML_H */
