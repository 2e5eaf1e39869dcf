#ifndef RET_H
#define RET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Error classes share their numbers with the CLI exit codes.
 */
typedef enum RetStatus {
  RET_STATUS_OK = 0,
  /**
   * NULL pointer, invalid UTF-8 or an out-of-range enum value.
   */
  RET_STATUS_INVALID_ARGUMENT = 1,
  RET_STATUS_CONFIG = 2,
  RET_STATUS_DATA = 3,
  RET_STATUS_NUMERICAL = 4,
  /**
   * A bug inside the library; the message says where.
   */
  RET_STATUS_INTERNAL = 5,
} RetStatus;

typedef enum RetTask {
  RET_TASK_REGRESSION = 0,
  RET_TASK_BINARY_CLASSIFICATION = 1,
} RetTask;

typedef enum RetPoolKind {
  RET_POOL_KIND_SCSD = 0,
  RET_POOL_KIND_MCSD = 1,
  RET_POOL_KIND_MCMD = 2,
} RetPoolKind;

typedef struct RetDataset RetDataset;

typedef struct RetModel RetModel;

typedef struct RetPool RetPool;

/**
 * Selection settings; obtain defaults from [`ret_fsa_params_default`].
 */
typedef struct RetFsaParams {
  size_t k;
  size_t n_iter;
  double mu;
  double eta;
  double rho;
  uint64_t seed;
} RetFsaParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *ret_last_error(void);

struct RetFsaParams ret_fsa_params_default(void);

/**
 * Loads a CSV with a header row. `label` is a column name or a decimal
 * column index. Rows with missing cells are dropped.
 *
 * # Safety
 * `path` and `label` must be NUL-terminated strings; `out` must be writable.
 */
enum RetStatus ret_dataset_from_csv(const char *path,
                                    const char *label,
                                    enum RetTask task,
                                    struct RetDataset **out);

/**
 * Builds a dataset from a row-major `n_rows x n_features` matrix and
 * `n_rows` labels (±1 for classification). The inputs are copied.
 *
 * # Safety
 * `x` must hold `n_rows * n_features` doubles and `y` `n_rows` doubles.
 */
enum RetStatus ret_dataset_from_arrays(const double *x,
                                       size_t n_rows,
                                       size_t n_features,
                                       const double *y,
                                       enum RetTask task,
                                       struct RetDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t ret_dataset_n_rows(const struct RetDataset *ds);

/**
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t ret_dataset_n_features(const struct RetDataset *ds);

/**
 * # Safety
 * `ds` must be NULL or a handle not freed before.
 */
void ret_dataset_free(struct RetDataset *ds);

/**
 * Grows a pool of `trees` trees. `chains` is ignored for SCSD; `depths`
 * holds one depth for SCSD/MCSD and the depth set for MCMD. The loss is
 * logistic for classification data and square for regression data.
 *
 * # Safety
 * `ds` must be a live dataset; `depths` must hold `n_depths` values.
 */
enum RetStatus ret_pool_generate(const struct RetDataset *ds,
                                 enum RetPoolKind kind,
                                 size_t trees,
                                 size_t chains,
                                 const size_t *depths,
                                 size_t n_depths,
                                 double learning_rate,
                                 uint64_t seed,
                                 struct RetPool **out);

/**
 * # Safety
 * `pool` must be NULL or a live pool handle.
 */
size_t ret_pool_len(const struct RetPool *pool);

/**
 * # Safety
 * `pool` must be live and `path` NUL-terminated.
 */
enum RetStatus ret_pool_save(const struct RetPool *pool, const char *path);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum RetStatus ret_pool_load(const char *path, struct RetPool **out);

/**
 * # Safety
 * `pool` must be NULL or a handle not freed before.
 */
void ret_pool_free(struct RetPool *pool);

/**
 * Selects at most `params->k` trees from `pool` and refits their leaf
 * weights on `ds`, using the loss the pool was grown with.
 *
 * # Safety
 * `pool`, `ds` and `params` must be live; `out` must be writable.
 */
enum RetStatus ret_select(const struct RetPool *pool,
                          const struct RetDataset *ds,
                          const struct RetFsaParams *params,
                          struct RetModel **out);

/**
 * # Safety
 * `model` must be NULL or a live model handle.
 */
size_t ret_model_n_trees(const struct RetModel *model);

/**
 * # Safety
 * `model` must be NULL or a live model handle.
 */
double ret_model_intercept(const struct RetModel *model);

/**
 * Scores a row-major `n_rows x n_features` matrix into `scores`.
 *
 * # Safety
 * `x` must hold `n_rows * n_features` doubles; `scores` must have room
 * for `n_rows` doubles.
 */
enum RetStatus ret_model_predict(const struct RetModel *model,
                                 const double *x,
                                 size_t n_rows,
                                 size_t n_features,
                                 double *scores);

/**
 * # Safety
 * `model` must be live and `path` NUL-terminated.
 */
enum RetStatus ret_model_save(const struct RetModel *model, const char *path);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum RetStatus ret_model_load(const char *path, struct RetModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not freed before.
 */
void ret_model_free(struct RetModel *model);

/**
 * Mann-Whitney AUC of `scores` against ±1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must hold `n` doubles; `out` must be writable.
 */
enum RetStatus ret_auc(const double *scores, const double *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RET_H */
