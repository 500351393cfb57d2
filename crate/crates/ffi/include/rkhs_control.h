#ifndef RKHS_CONTROL_H
#define RKHS_CONTROL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RkcStatus {
  RKC_STATUS_OK = 0,
  RKC_STATUS_NULL_POINTER = 1,
  RKC_STATUS_INVALID_STRING = 2,
  RKC_STATUS_INPUT = 3,
  RKC_STATUS_SCHEMA = 4,
  RKC_STATUS_CONFIG = 5,
  RKC_STATUS_DIVERGENCE = 6,
  RKC_STATUS_FITTING = 7,
  RKC_STATUS_PRICING = 8,
  RKC_STATUS_IO = 9,
  RKC_STATUS_PANIC = 10,
} RkcStatus;

/**
 * A loaded model together with its feature scaling.
 */
typedef struct RkcModel RkcModel;

/**
 * Test metrics of a run; entries that do not apply to the task are NaN.
 */
typedef struct RkcMetrics {
  double rmse;
  double mape;
  double accuracy;
  double f1;
  double naive_cost;
  double test_cost;
  size_t iterations;
} RkcMetrics;

typedef struct RkcHestonParams {
  double spot;
  double strike;
  double maturity;
  double rate;
  double kappa;
  double theta;
  double rho;
  double sigma;
  double v0;
} RkcHestonParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *rkc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rkc_version(void);

/**
 * Loads a model file written by a run.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RkcStatus rkc_model_load(const char *path, struct RkcModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`rkc_model_load`] and not be used afterwards.
 */
void rkc_model_free(struct RkcModel *model);

/**
 * Input dimension of the model.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum RkcStatus rkc_model_dim(const struct RkcModel *model, size_t *out);

/**
 * Prediction at `n` points stored row-major in `xs` (`n * dim` values, in
 * the original feature units).
 *
 * # Safety
 * `xs` must hold `n * dim` values and `out` room for `n`.
 */
enum RkcStatus rkc_model_predict_batch(const struct RkcModel *model,
                                       const double *xs,
                                       size_t n,
                                       size_t dim,
                                       double *out);

/**
 * Prediction at a single point of length `dim`.
 *
 * # Safety
 * `x` must hold `dim` values and `out` must be valid.
 */
enum RkcStatus rkc_model_predict(const struct RkcModel *model,
                                 const double *x,
                                 size_t dim,
                                 double *out);

/**
 * Runs the experiment described by a config file and writes its artifacts.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out` may be null.
 */
enum RkcStatus rkc_run_experiment(const char *config_path, struct RkcMetrics *out);

/**
 * European call price under Heston dynamics with the default FFT grid.
 *
 * # Safety
 * `params` and `out` must be valid pointers.
 */
enum RkcStatus rkc_heston_fft_price(const struct RkcHestonParams *params, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RKHS_CONTROL_H */
