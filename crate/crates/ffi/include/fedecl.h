#ifndef FEDECL_H
#define FEDECL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedeclStatus {
  FEDECL_STATUS_OK = 0,
  FEDECL_STATUS_NULL_POINTER = 1,
  FEDECL_STATUS_INVALID_ARGUMENT = 2,
  FEDECL_STATUS_IO = 3,
  FEDECL_STATUS_DECODE = 4,
  FEDECL_STATUS_SHAPE = 5,
  FEDECL_STATUS_NUMERIC = 6,
  FEDECL_STATUS_CONFIG = 7,
  FEDECL_STATUS_PANIC = 8,
} FedeclStatus;

/**
 * A single network loaded from a model checkpoint.
 */
typedef struct FedeclModel FedeclModel;

/**
 * A client's personalized state: retrained global model plus experts.
 */
typedef struct FedeclState FedeclState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes (excluding the NUL). `buf` may be null when `len`
 * is 0, to query the length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes unless `len` is 0.
 */
size_t fedecl_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fedecl_version(void);

/**
 * Decodes a model checkpoint held in memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be a valid pointer.
 */
enum FedeclStatus fedecl_model_from_bytes(const uint8_t *data,
                                          size_t len,
                                          struct FedeclModel **out);

/**
 * Loads a model checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum FedeclStatus fedecl_model_load(const char *path, struct FedeclModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library that was not freed.
 */
void fedecl_model_free(struct FedeclModel *model);

/**
 * Input width of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t fedecl_model_input_dim(const struct FedeclModel *model);

/**
 * Number of output classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t fedecl_model_num_classes(const struct FedeclModel *model);

/**
 * Forward pass over `rows` row-major inputs of width `cols`, writing
 * `rows × num_classes` logits to `out_logits`.
 *
 * # Safety
 * `inputs` must point to `rows * cols` doubles and `out_logits` to
 * `out_len` writable doubles.
 */
enum FedeclStatus fedecl_model_forward(const struct FedeclModel *model,
                                       const double *inputs,
                                       size_t rows,
                                       size_t cols,
                                       double *out_logits,
                                       size_t out_len);

/**
 * Decodes a personalized-state checkpoint held in memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be a valid pointer.
 */
enum FedeclStatus fedecl_state_from_bytes(const uint8_t *data,
                                          size_t len,
                                          struct FedeclState **out);

/**
 * Loads a personalized-state checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum FedeclStatus fedecl_state_load(const char *path, struct FedeclState **out);

/**
 * # Safety
 * `state` must be null or a handle from this library that was not freed.
 */
void fedecl_state_free(struct FedeclState *state);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `state` must be null or a live handle.
 */
size_t fedecl_state_num_classes(const struct FedeclState *state);

/**
 * Mixing weight stored in the state, or NaN for a null handle.
 *
 * # Safety
 * `state` must be null or a live handle.
 */
double fedecl_state_lambda(const struct FedeclState *state);

/**
 * Aggregated prediction for one input of width `len`. Pass NaN as
 * `lambda` to use the stored mixing weight. Writes the predicted class to
 * `out_class` and, when `out_logits` is not null, `num_classes` aggregated
 * logits to `out_logits` (which must hold `out_len >= num_classes`).
 *
 * # Safety
 * `x` must point to `len` doubles; `out_class` must be valid;
 * `out_logits` must be null or point to `out_len` writable doubles.
 */
enum FedeclStatus fedecl_state_predict(const struct FedeclState *state,
                                       const double *x,
                                       size_t len,
                                       double lambda,
                                       size_t *out_class,
                                       double *out_logits,
                                       size_t out_len);

/**
 * Trains and evaluates the experiment described by the TOML file at
 * `config_path` (null for the built-in defaults), writing checkpoints and
 * metrics into `out_dir`.
 *
 * # Safety
 * `config_path` must be null or a NUL-terminated string; `out_dir` must be
 * a NUL-terminated string.
 */
enum FedeclStatus fedecl_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDECL_H */
