/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef ONESIDED_MC_H
#define ONESIDED_MC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OmcStatus {
  OMC_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or a buffer of the wrong size.
   */
  OMC_STATUS_INVALID_ARGUMENT = 1,
  OMC_STATUS_CONFIG = 2,
  OMC_STATUS_SHAPE = 3,
  OMC_STATUS_PARSE = 4,
  OMC_STATUS_IO = 5,
  OMC_STATUS_PANIC = 6,
} OmcStatus;

typedef enum OmcRegime {
  OMC_REGIME_ROW_ONLY = 0,
  OMC_REGIME_ORACLE_MATCHING = 1,
  OMC_REGIME_DISTANCE_LIMITED = 2,
} OmcRegime;

/**
 * Observed data, plus the generator's truth when known.
 */
typedef struct OmcDataset OmcDataset;

typedef struct OmcEstimate OmcEstimate;

typedef struct OmcTheoryParams {
  enum OmcRegime regime;
  double h;
  double eta1;
  double eta2;
  double delta;
  double row_only_threshold;
  double oracle_threshold;
} OmcTheoryParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or "" after a success.
 * The pointer stays valid until the next `omc_*` call on the same thread.
 */
const char *omc_last_error(void);

/**
 * Draws a synthetic dataset for latent function `function` ("f1", "f2"
 * or "f3").
 *
 * # Safety
 * `function` must be a nul-terminated string and `out` a valid pointer.
 */
enum OmcStatus omc_generate(const char *function,
                            size_t n,
                            size_t m,
                            double p,
                            double sigma,
                            uint64_t seed,
                            struct OmcDataset **out);

/**
 * Builds a dataset from `count` observations `(rows[k], cols[k], values[k])`
 * and `m * d2` column covariates in row-major order.
 *
 * # Safety
 * Each array must hold the stated number of elements.
 */
enum OmcStatus omc_dataset_from_triplets(size_t n,
                                         size_t m,
                                         const size_t *rows,
                                         const size_t *cols,
                                         const double *values,
                                         size_t count,
                                         const double *beta,
                                         size_t d2,
                                         double sigma,
                                         struct OmcDataset **out);

/**
 * Reads a dataset directory.
 *
 * # Safety
 * `dir` must be a nul-terminated string and `out` a valid pointer.
 */
enum OmcStatus omc_dataset_load(const char *dir, struct OmcDataset **out);

/**
 * Writes a dataset directory.
 *
 * # Safety
 * `ds` must come from this library; `dir` must be a nul-terminated string.
 */
enum OmcStatus omc_dataset_save(const struct OmcDataset *ds, const char *dir);

/**
 * # Safety
 * `ds` must be null or a live handle from this library.
 */
size_t omc_dataset_rows(const struct OmcDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle from this library.
 */
size_t omc_dataset_cols(const struct OmcDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle from this library.
 */
size_t omc_dataset_observed(const struct OmcDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle from this library.
 */
bool omc_dataset_has_truth(const struct OmcDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle from this library that has not been freed.
 */
void omc_dataset_free(struct OmcDataset *ds);

/**
 * Three-step estimator with `k` nearest rows and column radius `eta2`.
 *
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
enum OmcStatus omc_estimate_ours(const struct OmcDataset *ds,
                                 double h,
                                 double eta2,
                                 size_t k,
                                 struct OmcEstimate **out);

/**
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
enum OmcStatus omc_estimate_rowreg(const struct OmcDataset *ds, double h, struct OmcEstimate **out);

/**
 * Two-sided kernel regression; needs a dataset with truth.
 *
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
enum OmcStatus omc_estimate_oracle(const struct OmcDataset *ds,
                                   double h_row,
                                   double h_col,
                                   struct OmcEstimate **out);

/**
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
enum OmcStatus omc_estimate_als(const struct OmcDataset *ds,
                                size_t rank,
                                double ridge,
                                uint64_t seed,
                                struct OmcEstimate **out);

/**
 * SoftImpute at a single shrinkage value, started from zero.
 *
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
enum OmcStatus omc_estimate_softimpute(const struct OmcDataset *ds,
                                       double lambda,
                                       struct OmcEstimate **out);

/**
 * Tunes `method` over the default grids by validation, then refits.
 *
 * # Safety
 * `ds` must be a live handle, `method` a nul-terminated string and `out` a
 * valid pointer.
 */
enum OmcStatus omc_estimate_tuned(const struct OmcDataset *ds,
                                  const char *method,
                                  uint64_t seed,
                                  struct OmcEstimate **out);

/**
 * # Safety
 * `est` must be null or a live handle from this library.
 */
size_t omc_estimate_rows(const struct OmcEstimate *est);

/**
 * # Safety
 * `est` must be null or a live handle from this library.
 */
size_t omc_estimate_cols(const struct OmcEstimate *est);

/**
 * Copies the estimate into `buf` in row-major order. `len` must equal
 * rows * cols.
 *
 * # Safety
 * `buf` must have room for `len` doubles.
 */
enum OmcStatus omc_estimate_values(const struct OmcEstimate *est, double *buf, size_t len);

/**
 * Mean squared error against the dataset's truth.
 *
 * # Safety
 * Both handles must be live and `out` a valid pointer.
 */
enum OmcStatus omc_mse(const struct OmcEstimate *est, const struct OmcDataset *ds, double *out);

/**
 * # Safety
 * `est` must be null or a handle from this library that has not been freed.
 */
void omc_estimate_free(struct OmcEstimate *est);

/**
 * Regime and recommended parameters with unit constants.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum OmcStatus omc_theory_params(size_t n,
                                 size_t m,
                                 double p,
                                 double lambda,
                                 double lipschitz,
                                 size_t d1,
                                 size_t d2,
                                 double sigma,
                                 struct OmcTheoryParams *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONESIDED_MC_H */
