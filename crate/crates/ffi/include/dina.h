#ifndef DINA_H
#define DINA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum DinaStatus {
  DINA_STATUS_OK = 0,
  DINA_STATUS_NULL_POINTER = 1,
  DINA_STATUS_INVALID_ARGUMENT = 2,
  DINA_STATUS_PARSE = 3,
  /**
   * Solver failure: no convergence, separation, rank deficiency.
   */
  DINA_STATUS_NUMERICAL = 4,
  DINA_STATUS_UNSUPPORTED = 5,
  DINA_STATUS_IO = 6,
  DINA_STATUS_BOOTSTRAP = 7,
  DINA_STATUS_PANIC = 8,
} DinaStatus;

/**
 * Opaque dataset handle.
 */
typedef struct DinaDataset DinaDataset;

/**
 * Opaque fitted-model handle.
 */
typedef struct DinaFit DinaFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dina_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *dina_last_error(void);

/**
 * Builds a dataset from row-major `x` (`n × d`), arms `w`, responses `y`
 * and, for Cox families, event indicators `delta` (may be null otherwise).
 * `family` uses the CLI syntax, e.g. `"poisson"` or `"cox-full"`.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `out` must be writable.
 */
enum DinaStatus dina_dataset_new(const char *family,
                                 size_t n,
                                 size_t d,
                                 const double *x,
                                 const uint32_t *w,
                                 const double *y,
                                 const uint8_t *delta,
                                 size_t n_arms,
                                 struct DinaDataset **out);

/**
 * Reads a dataset CSV (`x1..xd, w, y[, delta]`). `n_arms = 0` infers it from `w`.
 *
 * # Safety
 * `path` and `family` must be NUL-terminated strings; `out` must be writable.
 */
enum DinaStatus dina_dataset_read_csv(const char *path,
                                      const char *family,
                                      size_t n_arms,
                                      struct DinaDataset **out);

/**
 * # Safety
 * `data` must be null or a handle from `dina_dataset_new`/`dina_dataset_read_csv`.
 */
void dina_dataset_free(struct DinaDataset *data);

/**
 * Rows of `data`, or 0 for null.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t dina_dataset_rows(const struct DinaDataset *data);

/**
 * Covariates of `data`, or 0 for null.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t dina_dataset_covariates(const struct DinaDataset *data);

/**
 * Fits `method` (`"dina"`, `"e"`, `"se"`, `"x"`, `"pax"`, optionally with
 * `-partial`). Null learners mean `"glm"`.
 *
 * # Safety
 * `data` must be a live dataset handle, strings NUL-terminated or null, `out` writable.
 */
enum DinaStatus dina_fit(const struct DinaDataset *data,
                         const char *method,
                         const char *propensity_learner,
                         const char *outcome_learner,
                         uint64_t seed,
                         struct DinaFit **out);

/**
 * # Safety
 * `fit` must be null or a handle from `dina_fit`.
 */
void dina_fit_free(struct DinaFit *fit);

/**
 * Number of coefficients, `(K − 1)(1 + d)`; 0 for null.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
size_t dina_fit_coefficients(const struct DinaFit *fit);

/**
 * Copies the coefficients into `buf`, which holds `len` values.
 *
 * # Safety
 * `fit` must be a live fit handle and `buf` valid for `len` writes.
 */
enum DinaStatus dina_fit_coef(const struct DinaFit *fit, double *buf, size_t len);

/**
 * `τ̂(x)` of the first treated arm at the `d` covariates in `x`.
 *
 * # Safety
 * `fit` must be a live fit handle, `x` valid for `d` reads, `tau` writable.
 */
enum DinaStatus dina_fit_tau(const struct DinaFit *fit, const double *x, size_t d, double *tau);

/**
 * Bootstrap standard errors and normal-type intervals at `level` from `b`
 * resamples. Each output array must hold `len` values; any may be null.
 *
 * # Safety
 * `data` must be a live dataset handle, strings NUL-terminated or null, and
 * every non-null output valid for `len` writes.
 */
enum DinaStatus dina_bootstrap(const struct DinaDataset *data,
                               const char *method,
                               const char *propensity_learner,
                               const char *outcome_learner,
                               size_t b,
                               double level,
                               uint64_t seed,
                               double *estimate,
                               double *se,
                               double *ci_lo,
                               double *ci_hi,
                               size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DINA_H */
