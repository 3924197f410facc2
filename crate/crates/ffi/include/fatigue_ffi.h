#ifndef FATIGUE_FFI_H
#define FATIGUE_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdmStatus {
  FDM_STATUS_OK = 0,
  FDM_STATUS_NULL_POINTER = 1,
  FDM_STATUS_INVALID_ARGUMENT = 2,
  FDM_STATUS_IO = 3,
  FDM_STATUS_FORMAT = 4,
  FDM_STATUS_CHECKSUM = 5,
  FDM_STATUS_SHAPE = 6,
  FDM_STATUS_PANIC = 7,
} FdmStatus;

/**
 * Opaque model handle.
 */
typedef struct FdmModel FdmModel;

typedef struct FdmMetrics {
  double accuracy;
  /**
   * Indexed by class: 0 closed, 1 open.
   */
  double precision[2];
  double recall[2];
  double f1[2];
  double macro_precision;
  double macro_recall;
  double macro_f1;
} FdmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fdm_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *fdm_last_error(void);

/**
 * Creates an untrained full-size network initialised from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum FdmStatus fdm_model_new(uint64_t seed, struct FdmModel **out);

/**
 * Loads a model file. `*out` is set only on success.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum FdmStatus fdm_model_load(const char *path, struct FdmModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum FdmStatus fdm_model_save(const struct FdmModel *model, const char *path);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void fdm_model_free(struct FdmModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum FdmStatus fdm_model_param_count(const struct FdmModel *model, uint64_t *out);

/**
 * Input width and height the model expects.
 *
 * # Safety
 * `model` must be a live handle; both outputs writable.
 */
enum FdmStatus fdm_model_input_size(const struct FdmModel *model,
                                    uint32_t *out_width,
                                    uint32_t *out_height);

/**
 * Classifies a row-major grayscale image with values in 0..=255. Images of
 * another size are resized bilinearly. `out_label` is 0 closed, 1 open.
 *
 * # Safety
 * `pixels` must point to `width * height` floats; outputs writable.
 */
enum FdmStatus fdm_model_predict(const struct FdmModel *model,
                                 const float *pixels,
                                 uint32_t width,
                                 uint32_t height,
                                 float *out_probability,
                                 int32_t *out_label);

/**
 * Metrics for a 2x2 confusion matrix given row-major as
 * `[true0/pred0, true0/pred1, true1/pred0, true1/pred1]`.
 * Zero denominators yield 0.
 *
 * # Safety
 * `counts` must point to 4 integers and `out` be writable.
 */
enum FdmStatus fdm_metrics(const uint64_t *counts, struct FdmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FATIGUE_FFI_H */
