/* C interface for the cvdist simulation library. Generated; do not edit. */

#ifndef CVDIST_H
#define CVDIST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CvdistStatus {
  CVDIST_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  CVDIST_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CVDIST_STATUS_INVALID_UTF8 = 2,
  CVDIST_STATUS_INVALID_CONFIG = 3,
  /**
   * Parameters or state violate physicality.
   */
  CVDIST_STATUS_UNPHYSICAL = 4,
  CVDIST_STATUS_NUMERICAL_FAILURE = 5,
  CVDIST_STATUS_INSUFFICIENT_DATA = 6,
  /**
   * No shot satisfied the trigger condition.
   */
  CVDIST_STATUS_EMPTY_ENSEMBLE = 7,
  /**
   * The quadrature oracle failed its own convergence self-check.
   */
  CVDIST_STATUS_ORACLE_CONVERGENCE = 8,
  CVDIST_STATUS_IO_ERROR = 9,
  /**
   * The library caught an internal panic at the boundary.
   */
  CVDIST_STATUS_PANIC = 10,
} CvdistStatus;

/**
 * Opaque sweep/run configuration handle.
 */
typedef struct CvdistConfig CvdistConfig;

/**
 * Opaque result handle for one simulated grid point.
 */
typedef struct CvdistReport CvdistReport;

/**
 * Deterministic quadrature-oracle prediction for one grid point.
 */
typedef struct CvdistOracleMoments {
  double q;
  double success_rate;
  /**
   * Var(X_VA + X_VB), natural units.
   */
  double var_xplus;
  /**
   * Var(P_VA - P_VB), natural units.
   */
  double var_pminus;
  /**
   * Duan total variance, vacuum = 1.
   */
  double total_variance;
  /**
   * det of the normalized covariance matrix.
   */
  double determinant;
  double purity;
  double log_negativity;
} CvdistOracleMoments;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cvdist_version(void);

/**
 * Copy the calling thread's last error message into `buf` (truncating if
 * needed, always NUL-terminated when `cap > 0`). Returns the full message
 * length in bytes, excluding the terminator; 0 means no pending error.
 */
size_t cvdist_last_error(char *buf, size_t cap);

/**
 * New configuration with the library defaults, as a single default grid
 * point. Free with [`cvdist_config_free`].
 */
struct CvdistConfig *cvdist_config_new(void);

/**
 * Set one configuration key, e.g. ("sigma_pn", "0.3") or ("q", "0.8").
 * Keys and values use exactly the CLI config-file vocabulary; unknown keys
 * are rejected.
 *
 * # Safety
 * `cfg` must come from [`cvdist_config_new`]; `key`/`value` must be
 * NUL-terminated strings.
 */
enum CvdistStatus cvdist_config_set(struct CvdistConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be NULL or a pointer from [`cvdist_config_new`], not yet freed.
 */
void cvdist_config_free(struct CvdistConfig *cfg);

/**
 * Simulate the configured grid point (exactly one sigma_pn and one Q) and
 * return a report handle, or NULL with a pending error. Free the result
 * with [`cvdist_report_free`].
 *
 * # Safety
 * `cfg` must come from [`cvdist_config_new`].
 */
struct CvdistReport *cvdist_run_point(const struct CvdistConfig *cfg);

/**
 * Read one scalar from a report by name: success_rate, var_xplus,
 * var_pminus, I, D, purity, logneg, kurtosis_xplus or kurtosis_pminus
 * (long aliases total_variance/determinant/log_negativity also work).
 * Estimates degraded by scarce statistics read as NaN.
 *
 * # Safety
 * `report` must come from [`cvdist_run_point`]; `name` must be a
 * NUL-terminated string; `value`/`se` may be NULL when not wanted.
 */
enum CvdistStatus cvdist_report_metric(const struct CvdistReport *report,
                                       const char *name,
                                       double *value,
                                       double *se);

/**
 * Accepted and total shot counts of the simulated point.
 *
 * # Safety
 * `report` must come from [`cvdist_run_point`]; out-pointers may be NULL.
 */
enum CvdistStatus cvdist_report_counts(const struct CvdistReport *report,
                                       uint64_t *accepted,
                                       uint64_t *total);

/**
 * # Safety
 * `report` must be NULL or a pointer from [`cvdist_run_point`], not yet
 * freed.
 */
void cvdist_report_free(struct CvdistReport *report);

/**
 * Deterministic quadrature-oracle prediction for the configured grid point
 * (same single-point rule as [`cvdist_run_point`], no sampling involved).
 *
 * # Safety
 * `cfg` must come from [`cvdist_config_new`]; `out` must point to a
 * [`CvdistOracleMoments`].
 */
enum CvdistStatus cvdist_oracle_point(const struct CvdistConfig *cfg,
                                      struct CvdistOracleMoments *out);

/**
 * Run the Monte Carlo / oracle verification gate over the configured grid
 * (all sigma_pn x Q combinations). `pass` is 1 when every z-score clears
 * the gate, 0 otherwise.
 *
 * # Safety
 * `cfg` must come from [`cvdist_config_new`]; out-pointers may be NULL.
 */
enum CvdistStatus cvdist_verify(const struct CvdistConfig *cfg, double *max_abs_z, int32_t *pass);

/**
 * Efficiency giving the requested no-noise undistilled total variance at
 * the given input squeezing.
 *
 * # Safety
 * `eta_out` must point to a writable double.
 */
enum CvdistStatus cvdist_calibrate_eta(double target_i, double squeezing_db, double *eta_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVDIST_H */
