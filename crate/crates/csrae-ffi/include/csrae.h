/* C interface for the csrae library. */

#ifndef CSRAE_H
#define CSRAE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum CsraeStatus {
  /**
   * Success.
   */
  CsraeStatus_Ok = 0,
  /**
   * A pointer argument was null.
   */
  CsraeStatus_NullPointer = 1,
  /**
   * Arguments failed validation (shapes, ranges, component counts).
   */
  CsraeStatus_InvalidArgument = 2,
  /**
   * The JSON document could not be parsed into a mixture.
   */
  CsraeStatus_ParseError = 3,
  /**
   * A numerical failure (non-finite values, failed decomposition).
   */
  CsraeStatus_NumericalError = 4,
} CsraeStatus;

/**
 * Opaque handle to a diagonal Gaussian mixture.
 */
typedef struct CsraeGmm CsraeGmm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Pointer to a thread-local, NUL-terminated description of the most recent
 * error on this thread. Valid until the next failing call on the same
 * thread; never free it.
 */
const char *csrae_last_error_message(void);

/**
 * Parses a mixture from a JSON document of the form
 * `{"weights": [...], "means": [[...], ...], "vars": [[...], ...]}`.
 * On success writes a heap-allocated handle to `out`; release it with
 * [`csrae_gmm_free`].
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum CsraeStatus csrae_gmm_from_json(const char *json, struct CsraeGmm **out);

/**
 * Releases a mixture handle. Passing null is a no-op.
 *
 * # Safety
 * `gmm` must be null or a pointer obtained from [`csrae_gmm_from_json`]
 * that has not been freed already.
 */
void csrae_gmm_free(struct CsraeGmm *gmm);

/**
 * Writes the dimensionality of the mixture to `out`.
 *
 * # Safety
 * `gmm` and `out` must be valid pointers.
 */
enum CsraeStatus csrae_gmm_dim(const struct CsraeGmm *gmm, uintptr_t *out);

/**
 * Writes the number of mixture components to `out`.
 *
 * # Safety
 * `gmm` and `out` must be valid pointers.
 */
enum CsraeStatus csrae_gmm_components(const struct CsraeGmm *gmm, uintptr_t *out);

/**
 * Closed-form Cauchy-Schwarz divergence between two mixtures of equal
 * dimensionality.
 *
 * # Safety
 * `q`, `p` and `out` must be valid pointers.
 */
enum CsraeStatus csrae_cs_divergence(const struct CsraeGmm *q,
                                     const struct CsraeGmm *p,
                                     double *out);

/**
 * Closed-form KL divergence; both mixtures must have exactly one component.
 *
 * # Safety
 * `q`, `p` and `out` must be valid pointers.
 */
enum CsraeStatus csrae_kl_divergence(const struct CsraeGmm *q,
                                     const struct CsraeGmm *p,
                                     double *out);

/**
 * Draws `n` samples from the mixture into `out` (row-major, `n * dim`
 * doubles). `component` selects one component; pass a negative value to
 * sample from the full mixture. Sampling is deterministic in `seed`.
 *
 * # Safety
 * `gmm` must be valid and `out` must point to at least `n * dim` doubles.
 */
enum CsraeStatus csrae_gmm_sample(const struct CsraeGmm *gmm,
                                  uintptr_t n,
                                  uint64_t seed,
                                  int64_t component,
                                  double *out);

/**
 * Squared Frechet distance between Gaussians fitted to two row-major
 * feature buffers of shape `rows_a * dim` and `rows_b * dim`.
 *
 * The distance is computed on the caller's features as-is; values are not
 * comparable to published FID numbers, which use Inception-network features.
 *
 * # Safety
 * `a` must point to `rows_a * dim` doubles, `b` to `rows_b * dim` doubles,
 * and `out` must be a valid pointer.
 */
enum CsraeStatus csrae_frechet_distance(const double *a,
                                        uintptr_t rows_a,
                                        const double *b,
                                        uintptr_t rows_b,
                                        uintptr_t dim,
                                        double *out);

/**
 * Squared Frechet distance directly from means and diagonal covariances
 * (`dim` doubles each); a convenience for callers that already hold
 * summary statistics.
 *
 * # Safety
 * All pointers must reference `dim` doubles; `out` must be valid.
 */
enum CsraeStatus csrae_frechet_distance_diag(const double *mean_a,
                                             const double *var_a,
                                             const double *mean_b,
                                             const double *var_b,
                                             uintptr_t dim,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSRAE_H */
