#ifndef FLEETCAST_H
#define FLEETCAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_DIMENSION_MISMATCH = 3,
  FC_STATUS_INSUFFICIENT_HISTORY = 4,
  FC_STATUS_DATA = 5,
  FC_STATUS_PANIC = 6,
} FcStatus;

/**
 * Piecewise-linear site quantile curve.
 */
typedef struct FcCurve FcCurve;

/**
 * Sorted Monte Carlo sample of the fleet total.
 */
typedef struct FcFleet FcFleet;

/**
 * Gaussian copula correlation.
 */
typedef struct FcModel FcModel;

typedef struct FcMetrics {
  double picp;
  double aiw;
  double winkler;
} FcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fc_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *fc_last_error(void);

/**
 * Builds a curve from `n` (level, value) knots with support `[lo, hi]`.
 * Crossing knots are repaired; see `fc_curve_repaired`.
 *
 * # Safety
 * `levels` and `values` must point to `n` doubles; `out` must be writable.
 */
enum FcStatus fc_curve_new(const double *levels,
                           const double *values,
                           size_t n,
                           double lo,
                           double hi,
                           struct FcCurve **out);

/**
 * # Safety
 * `curve` must come from `fc_curve_new` and not be freed already; NULL is ignored.
 */
void fc_curve_free(struct FcCurve *curve);

/**
 * # Safety
 * `curve` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_curve_cdf(const struct FcCurve *curve, double x, double *out);

/**
 * # Safety
 * `curve` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_curve_quantile(const struct FcCurve *curve, double u, double *out);

/**
 * # Safety
 * `curve` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_curve_repaired(const struct FcCurve *curve, bool *out);

/**
 * Fits the copula correlation from normal scores, `n_sites` rows by
 * `n_times` columns, row-major.
 *
 * # Safety
 * `scores` must point to `n_sites * n_times` doubles; `out` must be writable.
 */
enum FcStatus fc_model_fit(const double *scores,
                           size_t n_sites,
                           size_t n_times,
                           struct FcModel **out);

/**
 * Wraps a given `n x n` correlation matrix (row-major), repairing it to
 * positive definite if needed.
 *
 * # Safety
 * `matrix` must point to `n * n` doubles; `out` must be writable.
 */
enum FcStatus fc_model_from_matrix(const double *matrix, size_t n, struct FcModel **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum FcStatus fc_model_identity(size_t n, struct FcModel **out);

/**
 * # Safety
 * `model` must come from an `fc_model_*` constructor; NULL is ignored.
 */
void fc_model_free(struct FcModel *model);

/**
 * Number of sites; 0 for NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t fc_model_dim(const struct FcModel *model);

/**
 * Copies the correlation matrix, row-major, into `out` of length `len`.
 *
 * # Safety
 * `model` must be a live handle; `out` must have room for `len` doubles.
 */
enum FcStatus fc_model_correlation(const struct FcModel *model, double *out, size_t len);

/**
 * Samples the fleet total for one hour. `curves[i]` is the marginal of model
 * site `i`; `hour` (hours since the Unix epoch) selects the random stream so
 * results match the library and CLI for the same seed.
 *
 * # Safety
 * `model` must be live; `curves` must point to `n` live curve handles;
 * `out` must be writable.
 */
enum FcStatus fc_aggregate(const struct FcModel *model,
                           const struct FcCurve *const *curves,
                           size_t n,
                           int64_t hour,
                           size_t samples,
                           uint64_t seed,
                           struct FcFleet **out);

/**
 * # Safety
 * `fleet` must come from `fc_aggregate`; NULL is ignored.
 */
void fc_fleet_free(struct FcFleet *fleet);

/**
 * Number of samples; 0 for NULL.
 *
 * # Safety
 * `fleet` must be a live handle or NULL.
 */
size_t fc_fleet_len(const struct FcFleet *fleet);

/**
 * Type-7 empirical quantile of the fleet sample.
 *
 * # Safety
 * `fleet` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_fleet_quantile(const struct FcFleet *fleet, double u, double *out);

/**
 * Central `1 - alpha` interval of the fleet sample.
 *
 * # Safety
 * `fleet` must be a live handle; `lo` and `hi` must be writable.
 */
enum FcStatus fc_fleet_interval(const struct FcFleet *fleet, double alpha, double *lo, double *hi);

/**
 * `max(lo - y, y - hi)`.
 */
double fc_conformity_score(double lo, double hi, double y);

/**
 * Conformal quantile of `n` scores. `finite_sample` selects the
 * `ceil((n + 1)(1 - alpha))`-th order statistic instead of the plain
 * empirical quantile.
 *
 * # Safety
 * `scores` must point to `n` doubles; `out` must be writable.
 */
enum FcStatus fc_conformal_quantile(const double *scores,
                                    size_t n,
                                    double alpha,
                                    bool finite_sample,
                                    double *out);

/**
 * Weighted conformal quantile with an extra `test_weight` at `+inf`.
 *
 * # Safety
 * `scores` and `weights` must point to `n` doubles; `out` must be writable.
 */
enum FcStatus fc_weighted_quantile(const double *scores,
                                   const double *weights,
                                   size_t n,
                                   double test_weight,
                                   double alpha,
                                   double *out);

/**
 * Widens `[lo, hi]` by `s_hat` and clips to `[support_lo, support_hi]`.
 *
 * # Safety
 * `out_lo` and `out_hi` must be writable.
 */
enum FcStatus fc_calibrate_interval(double lo,
                                    double hi,
                                    double s_hat,
                                    double support_lo,
                                    double support_hi,
                                    double *out_lo,
                                    double *out_hi);

/**
 * PICP, mean width and mean Winkler score of `n` intervals.
 *
 * # Safety
 * `lower`, `upper` and `realized` must point to `n` doubles; `out` must be writable.
 */
enum FcStatus fc_interval_metrics(const double *lower,
                                  const double *upper,
                                  const double *realized,
                                  size_t n,
                                  double alpha,
                                  struct FcMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEETCAST_H */
