#ifndef AEROTEXT_H
#define AEROTEXT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AtxStatus {
  ATX_STATUS_OK = 0,
  ATX_STATUS_NULL_POINTER = 1,
  ATX_STATUS_INVALID_UTF8 = 2,
  ATX_STATUS_IO = 3,
  ATX_STATUS_CORRUPT_CHECKPOINT = 4,
  ATX_STATUS_VERSION_UNSUPPORTED = 5,
  ATX_STATUS_INVALID_ARGUMENT = 6,
  ATX_STATUS_MODEL = 7,
  ATX_STATUS_PANIC = 8,
} AtxStatus;

/**
 * Opaque loaded checkpoint.
 */
typedef struct AtxModel AtxModel;

/**
 * Metrics for three classes, indexed by class code. `confusion` is
 * row-major with rows = actual, columns = predicted.
 */
typedef struct AtxReport {
  double precision[3];
  double recall[3];
  double f1[3];
  uint64_t support[3];
  double macro_precision;
  double macro_recall;
  double macro_f1;
  double weighted_precision;
  double weighted_recall;
  double weighted_f1;
  double accuracy;
  uint64_t total;
  uint64_t confusion[9];
} AtxReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AtxStatus atx_model_load(const char *path, struct AtxModel **out);

/**
 * Loads a checkpoint from memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` be a valid pointer.
 */
enum AtxStatus atx_model_load_bytes(const uint8_t *data, size_t len, struct AtxModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from a load function and not be used afterwards.
 */
void atx_model_free(struct AtxModel *model);

/**
 * Classifies one raw narrative. Writes three probabilities to `probs_out`
 * and the predicted class code to `class_out`.
 *
 * # Safety
 * `model` must be a live handle, `text` NUL-terminated, `probs_out` room for
 * three doubles, `class_out` a valid pointer.
 */
enum AtxStatus atx_model_predict(const struct AtxModel *model,
                                 const char *text,
                                 double *probs_out,
                                 int32_t *class_out);

/**
 * Sequence length the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t atx_model_max_len(const struct AtxModel *model);

/**
 * Static name for a class code, or null if the code is unknown.
 */
const char *atx_class_name(int32_t code);

/**
 * Builds the confusion matrix and report from `n` class codes.
 *
 * # Safety
 * `predictions` and `labels` must each point to `n` readable values and
 * `out` to a writable report.
 */
enum AtxStatus atx_classification_report(const int32_t *predictions,
                                         const int32_t *labels,
                                         size_t n,
                                         struct AtxReport *out);

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *atx_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *atx_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AEROTEXT_H */
