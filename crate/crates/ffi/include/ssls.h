#ifndef SSLS_H
#define SSLS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Nuisance learner choice.
 */
typedef enum SslsLearner {
  SSLS_LEARNER_OLS = 0,
  SSLS_LEARNER_CART = 1,
  SSLS_LEARNER_GBM = 2,
  SSLS_LEARNER_LOGISTIC = 3,
  /**
   * Propensity only: use the dataset's known propensity values.
   */
  SSLS_LEARNER_KNOWN = 4,
} SslsLearner;

/**
 * Result code of every fallible call.
 */
typedef enum SslsStatus {
  SSLS_STATUS_OK = 0,
  SSLS_STATUS_NULL_POINTER = 1,
  SSLS_STATUS_INVALID_ARGUMENT = 2,
  SSLS_STATUS_INVALID_INPUT = 3,
  SSLS_STATUS_GATE_FAILURE = 4,
  SSLS_STATUS_NUMERICAL_FAILURE = 5,
  SSLS_STATUS_PANIC = 6,
} SslsStatus;

/**
 * Opaque dataset with its grouping.
 */
typedef struct SslsDataset SslsDataset;

/**
 * Opaque estimation result.
 */
typedef struct SslsEffects SslsEffects;

/**
 * Estimation options. Obtain defaults from [`ssls_options_default`].
 */
typedef struct SslsOptions {
  enum SslsLearner learner_y;
  enum SslsLearner learner_e;
  size_t folds;
  size_t repeats;
  bool stratified;
  uint64_t seed;
  double clip;
} SslsOptions;

/**
 * Per-group test of `tau_g = tau0_g`.
 */
typedef struct SslsGroupTest {
  double tau_hat;
  double se;
  double t_stat;
  double p_value;
  double ci_lo;
  double ci_hi;
  double ci_simul_lo;
  double ci_simul_hi;
  bool reject_pointwise;
  bool reject_simul;
} SslsGroupTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *ssls_last_error_message(void);

struct SslsOptions ssls_options_default(void);

/**
 * Copies the inputs into a new dataset handle.
 *
 * `x` is row-major `n * p`; `groups` holds labels in `1..=n_groups`;
 * `propensity` may be null.
 *
 * # Safety
 * Every non-null pointer must be valid for the stated number of elements.
 */
enum SslsStatus ssls_dataset_new(const double *y,
                                 const uint8_t *a,
                                 const double *x,
                                 size_t n,
                                 size_t p,
                                 const size_t *groups,
                                 size_t n_groups,
                                 const double *propensity,
                                 struct SslsDataset **out);

/**
 * # Safety
 * `d` must come from [`ssls_dataset_new`] and not be freed twice.
 */
void ssls_dataset_free(struct SslsDataset *d);

/**
 * Cross-fits the nuisances and estimates every group's effect.
 *
 * # Safety
 * `d` must be a live dataset handle; `opts` may be null for defaults.
 */
enum SslsStatus ssls_estimate(const struct SslsDataset *d,
                              const struct SslsOptions *opts,
                              struct SslsEffects **out);

/**
 * # Safety
 * `e` must come from [`ssls_estimate`] and not be freed twice.
 */
void ssls_effects_free(struct SslsEffects *e);

/**
 * Number of groups, or 0 for a null handle.
 *
 * # Safety
 * `e` must be null or a live effects handle.
 */
size_t ssls_effects_n_groups(const struct SslsEffects *e);

/**
 * Estimate, standard error and size of group `g` (0-based).
 *
 * # Safety
 * `e` must be a live effects handle; output pointers may be null to skip.
 */
enum SslsStatus ssls_effects_get(const struct SslsEffects *e,
                                 size_t g,
                                 double *tau_hat,
                                 double *se,
                                 size_t *n_g);

/**
 * Pointwise and simultaneous tests of `tau = tau0` at level `alpha`.
 * `tau0` and `out` hold `len` elements, which must equal the group count.
 *
 * # Safety
 * Pointers must be valid for `len` elements.
 */
enum SslsStatus ssls_effects_inference(const struct SslsEffects *e,
                                       const double *tau0,
                                       double alpha,
                                       struct SslsGroupTest *out,
                                       size_t len);

/**
 * Serializes the estimates to a JSON string, released with
 * [`ssls_string_free`].
 *
 * # Safety
 * `e` must be a live effects handle.
 */
enum SslsStatus ssls_effects_to_json(const struct SslsEffects *e, char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void ssls_string_free(char *s);

/**
 * Simultaneous (maxT) critical value for `g` tests at level `alpha`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum SslsStatus ssls_maxt_critical(double alpha, size_t g, double *out);

/**
 * Minimum group size for standardized effect `z_tilde`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum SslsStatus ssls_power_min_n(double z_tilde, double alpha, double power, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSLS_H */
