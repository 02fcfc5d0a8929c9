#ifndef TRUNCDIFF_H
#define TRUNCDIFF_H

/* Generated by cbindgen from truncdiff-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TdStatus {
  TD_STATUS_OK = 0,
  /**
   * Invalid argument (wrong range, shape, or null pointer).
   */
  TD_STATUS_PARAM = 1,
  /**
   * Numeric failure (non-finite values, solver divergence).
   */
  TD_STATUS_NUMERIC = 2,
  /**
   * I/O failure.
   */
  TD_STATUS_IO = 3,
  /**
   * A panic crossed the boundary; state is still consistent.
   */
  TD_STATUS_INTERNAL = 4,
} TdStatus;

/**
 * Sampler kind selector for the chain entry points.
 */
typedef enum TdSampler {
  TD_SAMPLER_DDPM = 0,
  TD_SAMPLER_DDIM = 1,
} TdSampler;

/**
 * Linear solver selector for `td_poisson_blend`.
 */
typedef enum TdSolver {
  TD_SOLVER_CG = 0,
  TD_SOLVER_DENSE = 1,
} TdSolver;

/**
 * Opaque Gaussian-mixture target (diagonal covariance).
 */
typedef struct TdMixture TdMixture;

/**
 * Opaque diffusion variance schedule.
 */
typedef struct TdSchedule TdSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Borrowed pointer:
 * valid until the next failing td_ call on the same thread.
 */
const char *td_last_error_message(void);

/**
 * Static version string of the library.
 */
const char *td_version(void);

/**
 * Creates a linear schedule with `t` steps. On success writes a handle to
 * `out`; release it with `td_schedule_free`.
 */
enum TdStatus td_schedule_new_linear(uintptr_t t,
                                     double beta_start,
                                     double beta_end,
                                     struct TdSchedule **out);

/**
 * Releases a schedule handle. Null is ignored.
 */
void td_schedule_free(struct TdSchedule *s);

/**
 * Number of steps T, or 0 for a null handle.
 */
uintptr_t td_schedule_len(const struct TdSchedule *s);

/**
 * Writes alpha_bar(t) (valid for t = 0..=T) to `out`.
 */
enum TdStatus td_schedule_alpha_bar(const struct TdSchedule *s, uintptr_t t, double *out);

/**
 * Writes the ancestral noise scale sigma(t) (valid for t = 1..=T) to `out`.
 */
enum TdStatus td_schedule_sigma(const struct TdSchedule *s, uintptr_t t, double *out);

/**
 * Creates a mixture of `k` components in dimension `d`. `weights` has k
 * entries; `means` and `variances` are row-major k×d.
 */
enum TdStatus td_mixture_new(uintptr_t k,
                             uintptr_t d,
                             const double *weights,
                             const double *means,
                             const double *variances,
                             struct TdMixture **out);

/**
 * Releases a mixture handle. Null is ignored.
 */
void td_mixture_free(struct TdMixture *m);

/**
 * Draws n samples into `out_points` (row-major n×d). Deterministic in the
 * seed.
 */
enum TdStatus td_mixture_sample(const struct TdMixture *m,
                                uintptr_t n,
                                uint64_t seed,
                                double *out_points);

/**
 * Optimal noise prediction for the mixture at a single point x (length d),
 * step t. Writes d values to `out_eps`.
 */
enum TdStatus td_analytic_eps(const struct TdMixture *m,
                              const struct TdSchedule *s,
                              const double *x,
                              uintptr_t d,
                              uintptr_t t,
                              double *out_eps);

/**
 * Runs a reverse chain with the mixture's analytic denoiser from pure
 * noise: start = standard normal (derived from child seed 0), chain noise
 * from child seed 1. Writes n×d values to `out_points`.
 */
enum TdStatus td_sample_chain(const struct TdMixture *m,
                              const struct TdSchedule *s,
                              enum TdSampler kind,
                              uintptr_t t_start,
                              uintptr_t n_steps,
                              uintptr_t n,
                              uint64_t seed,
                              double *out_points);

/**
 * Truncation strategy with the analytic denoiser: embeds `coarse` (n×d) at
 * step `t_trunc` and refines it. `t_trunc = 0` copies the coarse points
 * unchanged.
 */
enum TdStatus td_truncated_sample(const struct TdMixture *m,
                                  const struct TdSchedule *s,
                                  enum TdSampler kind,
                                  uintptr_t t_trunc,
                                  uintptr_t n_steps,
                                  const double *coarse,
                                  uintptr_t n,
                                  uint64_t seed,
                                  double *out_points);

/**
 * Energy distance between two sample sets (row-major n×d and m×d).
 */
enum TdStatus td_energy_distance(const double *a,
                                 uintptr_t n,
                                 const double *b,
                                 uintptr_t m,
                                 uintptr_t d,
                                 double *out);

/**
 * Poisson-blends `f_star` with guidance gradients from `h` inside the
 * region where `omega` is nonzero. Images are row-major width×height
 * intensity buffers. `tol`/`max_iter` configure CG (`max_iter = 0` means
 * 10× the unknown count) and are ignored by the dense solver. Writes
 * width×height values to `out_pixels`; pixels outside the region are
 * copied from `f_star` bit-exactly.
 */
enum TdStatus td_poisson_blend(uintptr_t width,
                               uintptr_t height,
                               const double *f_star,
                               const double *h,
                               const uint8_t *omega,
                               enum TdSolver solver,
                               double tol,
                               uintptr_t max_iter,
                               double *out_pixels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRUNCDIFF_H */
