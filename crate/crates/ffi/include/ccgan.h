#ifndef CCGAN_H
#define CCGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum CcganStatus {
  CCGAN_STATUS_OK = 0,
  CCGAN_STATUS_NULL_POINTER = 1,
  CCGAN_STATUS_INVALID_ARGUMENT = 2,
  CCGAN_STATUS_SHAPE = 3,
  CCGAN_STATUS_NON_FINITE = 4,
  CCGAN_STATUS_IO = 5,
  CCGAN_STATUS_PARSE = 6,
  CCGAN_STATUS_BUFFER_TOO_SMALL = 7,
  CCGAN_STATUS_PANIC = 8,
  CCGAN_STATUS_OTHER = 9,
} CcganStatus;

/**
 * Loaded dataset.
 */
typedef struct CcganDataset CcganDataset;

/**
 * Loaded generator together with the raw label range of its training data.
 */
typedef struct CcganGenerator CcganGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *ccgan_last_error_message(void);

/**
 * Rule-of-thumb Gaussian noise scale for `n` raw labels on `[raw_min, raw_max]`.
 *
 * # Safety
 * `labels` must point to `n` doubles and `out` must be writable.
 */
enum CcganStatus ccgan_rule_of_thumb_sigma(const double *labels,
                                           uintptr_t n,
                                           double raw_min,
                                           double raw_max,
                                           double *out);

/**
 * Vicinity width `kappa` and soft-weight decay `nu` for raw labels.
 *
 * # Safety
 * `labels` must point to `n` doubles; `out_kappa` and `out_nu` must be writable.
 */
enum CcganStatus ccgan_kappa_and_nu(const double *labels,
                                    uintptr_t n,
                                    double raw_min,
                                    double raw_max,
                                    double m_kappa,
                                    double *out_kappa,
                                    double *out_nu);

/**
 * Squared Fréchet distance between two Gaussians of dimension `dim`;
 * covariances are row-major `dim * dim` arrays.
 *
 * # Safety
 * Means must point to `dim` doubles, covariances to `dim * dim`, `out` writable.
 */
enum CcganStatus ccgan_frechet_distance(uintptr_t dim,
                                        const double *mean_a,
                                        const double *cov_a,
                                        const double *mean_b,
                                        const double *cov_b,
                                        double *out);

/**
 * Loads a `y,x1,...,xd` CSV and its sidecar manifest.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CcganStatus ccgan_dataset_load(const char *path, struct CcganDataset **out);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
uintptr_t ccgan_dataset_len(const struct CcganDataset *ds);

/**
 * Sample dimension; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
uintptr_t ccgan_dataset_dim(const struct CcganDataset *ds);

/**
 * Copies the raw labels into `out` (capacity `cap`).
 *
 * # Safety
 * `ds` must be a live handle and `out` must hold `cap` doubles.
 */
enum CcganStatus ccgan_dataset_raw_labels(const struct CcganDataset *ds,
                                          double *out,
                                          uintptr_t cap);

/**
 * Releases a dataset handle; null is ignored.
 *
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void ccgan_dataset_free(struct CcganDataset *ds);

/**
 * Loads a generator checkpoint written by training.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CcganStatus ccgan_generator_load(const char *path, struct CcganGenerator **out);

/**
 * Output dimension; 0 for a null handle.
 *
 * # Safety
 * `g` must be null or a live handle.
 */
uintptr_t ccgan_generator_data_dim(const struct CcganGenerator *g);

/**
 * Generates `n_per_label` samples for each of `n_labels` raw labels, row-major
 * into `out`, which must hold `n_labels * n_per_label * data_dim` doubles.
 * Identical seeds give identical output.
 *
 * # Safety
 * `g` must be a live handle, `labels` must hold `n_labels` doubles and `out`
 * `cap` doubles.
 */
enum CcganStatus ccgan_generator_generate(const struct CcganGenerator *g,
                                          const double *labels,
                                          uintptr_t n_labels,
                                          uintptr_t n_per_label,
                                          uint64_t seed,
                                          double *out,
                                          uintptr_t cap);

/**
 * Releases a generator handle; null is ignored.
 *
 * # Safety
 * `g` must be null or a handle not yet freed.
 */
void ccgan_generator_free(struct CcganGenerator *g);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCGAN_H */
