#ifndef BIPMIXED_CAPI_H
#define BIPMIXED_CAPI_H

/* Generated by cbindgen from the bipmixed-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define BIP_OK 0

/**
 * Bad input: paths, configuration, or data.
 */
#define BIP_ERR_INPUT 1

/**
 * Internal failure (numerical breakdown, panic).
 */
#define BIP_ERR_INTERNAL 2

/**
 * Opaque multi-view dataset handle.
 */
typedef struct BipDataset BipDataset;

/**
 * Opaque fitted-model handle (any method).
 */
typedef struct BipModel BipModel;

/**
 * Message of the last failed call on this thread. Never NULL; empty before
 * any failure. The pointer is invalidated by the next failing call.
 */
const char *bip_last_error(void);

/**
 * Load a dataset through its JSON manifest. On success `*out` owns the
 * handle.
 *
 * # Safety
 * `manifest_path` must be a valid NUL-terminated string and `out` a valid
 * pointer.
 */
int32_t bip_dataset_load(const char *manifest_path, BipDataset **out);

/**
 * Rows in the dataset; -1 if the handle is NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle from this library.
 */
int64_t bip_dataset_n_rows(const BipDataset *dataset);

/**
 * Feature views in the dataset; -1 if the handle is NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle from this library.
 */
int64_t bip_dataset_n_views(const BipDataset *dataset);

/**
 * Free a dataset handle. NULL is a no-op.
 *
 * # Safety
 * `dataset` must be NULL or a live handle; it is dead afterwards.
 */
void bip_dataset_free(BipDataset *dataset);

/**
 * Draw one synthetic benchmark replicate into `out_dir` (train/, test/,
 * truth.json), as the command-line `simulate` does.
 *
 * # Safety
 * `out_dir` must be a valid NUL-terminated string.
 */
int32_t bip_simulate(uint32_t scenario_id, uint64_t seed, const char *out_dir);

/**
 * Fit a model. `method` is "bipmixed", "bip", or "pca2step"; `config_json`
 * is a sectioned run configuration (data/model/mcmc/prediction/output) or
 * NULL for defaults. On success `*out` owns the handle.
 *
 * # Safety
 * `dataset` must be a live handle, strings valid or NULL as documented,
 * `out` a valid pointer.
 */
int32_t bip_fit(const BipDataset *dataset,
                const char *method,
                const char *config_json,
                BipModel **out);

/**
 * Archive a model as JSON.
 *
 * # Safety
 * `model` must be a live handle; `path` a valid NUL-terminated string.
 */
int32_t bip_model_save(const BipModel *model, const char *path);

/**
 * Load a model archived by `bip_model_save`. On success `*out` owns the
 * handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int32_t bip_model_load(const char *path, BipModel **out);

/**
 * Predict the outcome for every row of `dataset`, writing into the caller's
 * buffer, which must hold exactly `bip_dataset_n_rows(dataset)` doubles.
 *
 * # Safety
 * `model` and `dataset` must be live handles; `y_hat` must point to
 * `y_hat_len` writable doubles.
 */
int32_t bip_predict(const BipModel *model,
                    const BipDataset *dataset,
                    double *y_hat,
                    uintptr_t y_hat_len);

/**
 * Free a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a live handle; it is dead afterwards.
 */
void bip_model_free(BipModel *model);

#endif  /* BIPMIXED_CAPI_H */
