#ifndef NNCOMPRESS_H
#define NNCOMPRESS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>
typedef struct NncModel NncModel;

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum NncStatus {
  NncStatus_Ok = 0,
  NncStatus_NullPointer = 1,
  NncStatus_InvalidArgument = 2,
  NncStatus_Io = 3,
  NncStatus_BadCheckpoint = 4,
  NncStatus_Infeasible = 5,
  NncStatus_Internal = 6,
} NncStatus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, or NULL when the previous call
 * succeeded. The pointer stays valid until the next failing call.
 */
const char *nnc_last_error_message(void);

/**
 * Library version as a static string; do not free.
 */
const char *nnc_version(void);

/**
 * Free a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by an `nnc_*` function and not yet freed.
 */
void nnc_string_free(char *s);

/**
 * Load a model checkpoint (JSON) into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` a valid pointer.
 */
enum NncStatus nnc_model_load(const char *path, NncModel **out);

/**
 * Write the model to a checkpoint file.
 *
 * # Safety
 * `model` must be a live handle from `nnc_model_load`; `path` NUL-terminated.
 */
enum NncStatus nnc_model_save(const NncModel *model, const char *path);

/**
 * Free a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must come from `nnc_model_load` and not be freed twice.
 */
void nnc_model_free(NncModel *model);

/**
 * # Safety
 * `model` live handle, `out` valid pointer.
 */
enum NncStatus nnc_model_layer_count(const NncModel *model, size_t *out);

/**
 * Total and nonzero weight counts (biases excluded).
 *
 * # Safety
 * `model` live handle; out pointers valid or NULL (skipped).
 */
enum NncStatus nnc_model_weight_counts(const NncModel *model, size_t *total, size_t *nonzero);

/**
 * Pruning rate (original / nonzero). Infinite for an all-zero model.
 *
 * # Safety
 * `model` live handle, `out` valid pointer.
 */
enum NncStatus nnc_model_prune_rate(const NncModel *model, bool conv_only, double *out);

/**
 * Feasibility check against the checkpoint's own metadata (masks and
 * recorded quantization levels). `Ok` and `*feasible = false` means the
 * check ran and found violations.
 *
 * # Safety
 * `model` live handle, `feasible` valid pointer.
 */
enum NncStatus nnc_model_verify(const NncModel *model, bool *feasible);

/**
 * Storage report as a JSON string (free with `nnc_string_free`).
 *
 * # Safety
 * `model` live handle, `out` valid pointer.
 */
enum NncStatus nnc_storage_report_json(const NncModel *model,
                                       uint32_t quant_bits,
                                       bool conv_only,
                                       bool structured,
                                       char **out);

/**
 * Keep the `keep` largest-magnitude entries of `values`, zero the rest,
 * writing to `out` (may alias `values`).
 *
 * # Safety
 * `values` and `out` must point to `len` doubles.
 */
enum NncStatus nnc_project_top_k(const double *values, size_t len, size_t keep, double *out);

/**
 * Map every entry to its nearest level (ties toward the smaller level).
 *
 * # Safety
 * `values`/`out` point to `len` doubles; `levels` to `levels_len` doubles,
 * strictly increasing.
 */
enum NncStatus nnc_project_nearest_levels(const double *values,
                                          size_t len,
                                          const double *levels,
                                          size_t levels_len,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NNCOMPRESS_H */
