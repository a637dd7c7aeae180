#ifndef BIPARTITE_H
#define BIPARTITE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  BP_STATUS_OK = 0,
  BP_STATUS_NULL_POINTER = 1,
  BP_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed JSON argument.
   */
  BP_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Input data or configuration rejected.
   */
  BP_STATUS_VALIDATION = 4,
  /**
   * The estimator could not produce a result.
   */
  BP_STATUS_ESTIMATION = 5,
  /**
   * Index or selector outside the valid range, or result not computed.
   */
  BP_STATUS_OUT_OF_RANGE = 6,
  BP_STATUS_PANIC = 7,
} BpStatus;

/**
 * Scalar estimands.
 */
typedef enum {
  BP_ESTIMAND_TAU = 0,
  BP_ESTIMAND_DELTA0 = 1,
  BP_ESTIMAND_DELTA1 = 2,
} BpEstimand;

/**
 * Loaded and validated dataset.
 */
typedef struct BpDataset BpDataset;

/**
 * Fitted surface and estimands, with bootstrap intervals when requested.
 */
typedef struct BpEstimate BpEstimate;

/**
 * Derived key-associated and upwind treatments.
 */
typedef struct BpExposures BpExposures;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *bp_version(void);

/**
 * Message of the last failure on this thread, or null.
 */
const char *bp_last_error_message(void);

/**
 * Module-qualified code of the last failure on this thread (e.g.
 * `data.negative_weight`), or null.
 */
const char *bp_last_error_code(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void bp_string_free(char *s);

/**
 * Loads the three CSV files with a covariate schema given as JSON.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings; `out` must be writable.
 */
BpStatus bp_dataset_load(const char *interventional_path,
                         const char *outcome_path,
                         const char *interference_path,
                         const char *schema_json,
                         BpDataset **out);

/**
 * Generates a synthetic dataset. `config_json` is a synthetic-design
 * config; null uses the defaults.
 *
 * # Safety
 * `config_json` must be null or a valid NUL-terminated string; `out` must be writable.
 */
BpStatus bp_dataset_simulate(const char *config_json, BpDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library that has not been freed.
 */
void bp_dataset_free(BpDataset *ds);

/**
 * Number of outcome and interventional units.
 *
 * # Safety
 * `ds` must be a live handle; output pointers must be writable or null.
 */
BpStatus bp_dataset_dims(const BpDataset *ds, size_t *n_outcome, size_t *n_interventional);

/**
 * Derives key-associated and upwind treatments.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
BpStatus bp_exposures_derive(const BpDataset *ds, BpExposures **out);

/**
 * # Safety
 * `ex` must be null or a handle from this library that has not been freed.
 */
void bp_exposures_free(BpExposures *ex);

/**
 * Number of outcome units in the table.
 *
 * # Safety
 * `ex` must be a live handle and `len` writable.
 */
BpStatus bp_exposures_len(const BpExposures *ex, size_t *len);

/**
 * Row `i`: zero-based key-associated unit index, treatment `z` (0 or 1),
 * raw and rescaled upwind treatment. Null output pointers are skipped.
 *
 * # Safety
 * `ex` must be a live handle; output pointers must be writable or null.
 */
BpStatus bp_exposures_get(const BpExposures *ex,
                          size_t i,
                          size_t *key_associated,
                          uint8_t *z,
                          double *g_raw,
                          double *g);

/**
 * Runs the estimator. `config_json` holds pipeline settings
 * (`{"propensity": {...}, "grid": {...}}`); null uses the defaults.
 *
 * # Safety
 * `ds` must be a live handle, `config_json` null or a valid string, `out` writable.
 */
BpStatus bp_estimate_fit(const BpDataset *ds, const char *config_json, BpEstimate **out);

/**
 * Runs the estimator with egocentric bootstrap intervals. Results depend
 * on `seed` but not on `jobs`.
 *
 * # Safety
 * `ds` must be a live handle, `config_json` null or a valid string, `out` writable.
 */
BpStatus bp_estimate_bootstrap(const BpDataset *ds,
                               const char *config_json,
                               size_t replicates,
                               uint64_t seed,
                               double ci_level,
                               size_t jobs,
                               BpEstimate **out);

/**
 * # Safety
 * `est` must be null or a handle from this library that has not been freed.
 */
void bp_estimate_free(BpEstimate *est);

/**
 * Point estimate of a scalar estimand.
 *
 * # Safety
 * `est` must be a live handle and `value` writable.
 */
BpStatus bp_estimate_value(const BpEstimate *est, BpEstimand which, double *value);

/**
 * Percentile interval of a scalar estimand; `OutOfRange` when the
 * estimate was fitted without a bootstrap.
 *
 * # Safety
 * `est` must be a live handle; `lo` and `hi` writable.
 */
BpStatus bp_estimate_interval(const BpEstimate *est, BpEstimand which, double *lo, double *hi);

/**
 * Number of grid points of the dose-response curves.
 *
 * # Safety
 * `est` must be a live handle and `len` writable.
 */
BpStatus bp_estimate_grid_len(const BpEstimate *est, size_t *len);

/**
 * Copies the grid and the pooled curve `mu(z, .)` into caller buffers of
 * length `len`, which must equal the grid length. `grid` may be null.
 *
 * # Safety
 * `est` must be a live handle; buffers must hold `len` doubles.
 */
BpStatus bp_estimate_curve(const BpEstimate *est, uint8_t z, double *grid, double *mu, size_t len);

/**
 * Estimands as JSON (the CLI's `estimands.json` layout). Release with
 * [`bp_string_free`].
 *
 * # Safety
 * `est` must be a live handle and `out` writable.
 */
BpStatus bp_estimate_to_json(const BpEstimate *est, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIPARTITE_H */
