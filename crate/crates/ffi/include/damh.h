#ifndef DAMH_H
#define DAMH_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Algorithm selector for [`DamhRunConfig`].
 */
typedef enum {
  DAMH_ALGORITHM_MH = 0,
  DAMH_ALGORITHM_DA = 1,
} DamhAlgorithm;

/**
 * Branch-probability policy for prefetching.
 */
typedef enum {
  DAMH_POLICY_STATIC_HALF = 0,
  DAMH_POLICY_OBSERVED_RATE = 1,
  DAMH_POLICY_UNIFORM_AWARE = 2,
  DAMH_POLICY_APPROX_RATIO = 3,
  DAMH_POLICY_CAPPED_APPROX = 4,
} DamhPolicy;

/**
 * Result code of every fallible call.
 */
typedef enum {
  DAMH_STATUS_OK = 0,
  DAMH_STATUS_NULL_POINTER = 1,
  DAMH_STATUS_INVALID_ARGUMENT = 2,
  DAMH_STATUS_DIMENSION_MISMATCH = 3,
  DAMH_STATUS_NON_FINITE = 4,
  DAMH_STATUS_OUTSIDE_SUPPORT = 5,
  DAMH_STATUS_NUMERICAL = 6,
  DAMH_STATUS_WORKER = 7,
  DAMH_STATUS_IO = 8,
  DAMH_STATUS_BUFFER_TOO_SMALL = 9,
  DAMH_STATUS_PANIC = 10,
  DAMH_STATUS_INTERNAL = 11,
} DamhStatus;

/**
 * Output of a finished run.
 */
typedef struct DamhRun DamhRun;

/**
 * Factorized target under construction or complete.
 */
typedef struct DamhTarget DamhTarget;

/**
 * Settings for [`damh_run`]. Start from [`damh_run_config_default`].
 */
typedef struct {
  uint64_t seed;
  uint64_t iterations;
  uint64_t burnin;
  uint64_t thin;
  DamhAlgorithm algorithm;
  /**
   * 0 runs serially; otherwise the number of prefetch workers.
   */
  size_t workers;
  DamhPolicy policy;
  double beta_cap;
  /**
   * Standard deviation of the isotropic Gaussian random walk.
   */
  double proposal_sd;
} DamhRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next call.
 */
const char *damh_last_error_message(void);

/**
 * Library name and version, static storage.
 */
const char *damh_version(void);

DamhRunConfig damh_run_config_default(void);

/**
 * New empty target of dimension `dim`.
 */
DamhStatus damh_target_new(size_t dim, DamhTarget **out);

/**
 * Appends a factor. Cheap factors must precede expensive ones. `name` may be null.
 */
DamhStatus damh_target_add_factor(DamhTarget *target,
                                  const char *name,
                                  bool expensive,
                                  double (*term)(const double *theta, size_t dim, void *user_data),
                                  void *user_data);

/**
 * Validates the factor list; no factors can be added afterwards.
 */
DamhStatus damh_target_finalize(DamhTarget *target);

void damh_target_free(DamhTarget *target);

/**
 * Runs a chain from `init` (length = target dimension). The target is
 * finalized first if needed.
 */
DamhStatus damh_run(DamhTarget *target,
                    const double *init,
                    size_t init_len,
                    const DamhRunConfig *config,
                    DamhRun **out);

void damh_run_free(DamhRun *run);

/**
 * Number of recorded draws.
 */
size_t damh_run_len(const DamhRun *run);

/**
 * Dimension of each recorded draw.
 */
size_t damh_run_dim(const DamhRun *run);

/**
 * Copies the draws row-major into `buf`, which must hold `len * dim` values.
 */
DamhStatus damh_run_states(const DamhRun *run, double *buf, size_t buf_len);

/**
 * Acceptance rate over all steps, including burn-in.
 */
DamhStatus damh_run_acceptance_rate(const DamhRun *run, double *out);

/**
 * Minimum per-coordinate effective sample size of the recorded draws.
 */
DamhStatus damh_run_ess(const DamhRun *run, double *out);

/**
 * Product of `min(rho_k, 1)`.
 */
DamhStatus damh_combined_acceptance_prob(const double *rho, size_t n, double *out);

/**
 * Effective sample size of a scalar series.
 */
DamhStatus damh_effective_sample_size(const double *series, size_t n, double *out);

/**
 * Greedy prefetch tour for a constant branch probability `alpha`. Writes up
 * to `cap` heap indices and reach probabilities in construction order and
 * the count to `written`. Indices beyond `u64` are reported as an error.
 */
DamhStatus damh_build_tour(size_t capacity,
                           double alpha,
                           uint64_t *indices,
                           double *gammas,
                           size_t cap,
                           size_t *written);

/**
 * Runs a full experiment from a TOML config (same keys as the CLI config
 * file) and writes `samples.csv` and `report.json` to its `out` directory.
 */
DamhStatus damh_run_experiment_toml(const char *config_toml);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAMH_H */
