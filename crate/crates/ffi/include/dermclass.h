#ifndef DERMCLASS_H
#define DERMCLASS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of diagnostic categories; probability buffers hold this many values.
 */
#define DERM_N_CATEGORIES 7

/**
 * Number of layer groups addressed by schedule queries.
 */
#define DERM_N_GROUPS 3

typedef enum {
  DERM_STATUS_OK = 0,
  DERM_STATUS_NULL_POINTER = 1,
  DERM_STATUS_INVALID_ARGUMENT = 2,
  DERM_STATUS_IO = 3,
  DERM_STATUS_FORMAT = 4,
  DERM_STATUS_IMAGE = 5,
  DERM_STATUS_CHECKPOINT = 6,
  DERM_STATUS_NUMERIC = 7,
  DERM_STATUS_PANIC = 8,
} DermStatus;

/**
 * Trained classifier handle.
 */
typedef struct DermModel DermModel;

/**
 * Learning-rate schedule handle.
 */
typedef struct DermSchedule DermSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or null. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *derm_last_error(void);

/**
 * Static, nul-terminated code (`"MEL"`, `"NV"`, ...) of category `index`,
 * or null when out of range.
 */
const char *derm_category_code(size_t index);

/**
 * Numerically stable softmax of `n` logits into `out` (also `n` long).
 *
 * # Safety
 * `logits` and `out` must point to `n` readable / writable doubles.
 */
DermStatus derm_softmax(const double *logits, size_t n, double *out);

/**
 * Fills a row-major 7x7 confusion matrix (rows true, columns predicted)
 * from `n` predicted and true category indices.
 *
 * # Safety
 * `preds` and `truths` must point to `n` values; `out` to 49 writable counts.
 */
DermStatus derm_confusion_matrix(const size_t *preds,
                                 const size_t *truths,
                                 size_t n,
                                 uint64_t *out);

/**
 * Mean per-category recall of a row-major 7x7 confusion matrix, over the
 * categories with at least one true instance.
 *
 * # Safety
 * `counts` must point to 49 readable values; `out` to one writable double.
 */
DermStatus derm_balanced_accuracy(const uint64_t *counts, double *out);

/**
 * Builds the default two-phase schedule: four one-epoch head-only cycles,
 * then whole-network cycles of 1, 2, 4 and 8 epochs, group rates
 * `base_lr / [9, 3, 1]`, cosine decay.
 *
 * # Safety
 * `out` must be a valid location for a handle pointer.
 */
DermStatus derm_schedule_new(double base_lr, size_t steps_per_epoch, DermSchedule **out);

/**
 * Builds the schedule described by the `[train]` section of a TOML run
 * configuration for a training set of `n_train` images.
 *
 * # Safety
 * `config_toml` must be a nul-terminated string; `out` a valid location.
 */
DermStatus derm_schedule_from_config(const char *config_toml, size_t n_train, DermSchedule **out);

/**
 * Total number of optimizer steps, or 0 for a null handle.
 *
 * # Safety
 * `schedule` must be null or a live handle.
 */
size_t derm_schedule_total_steps(const DermSchedule *schedule);

/**
 * Total number of epochs, or 0 for a null handle.
 *
 * # Safety
 * `schedule` must be null or a live handle.
 */
size_t derm_schedule_total_epochs(const DermSchedule *schedule);

/**
 * Learning rate of layer group `group` (0 = lowest) at global step `step`.
 * Frozen groups report 0.
 *
 * # Safety
 * `schedule` must be a live handle; `out` one writable double.
 */
DermStatus derm_schedule_lr(const DermSchedule *schedule, size_t step, size_t group, double *out);

/**
 * Releases a schedule handle. Null is a no-op.
 *
 * # Safety
 * `schedule` must be null or a handle not yet freed.
 */
void derm_schedule_free(DermSchedule *schedule);

/**
 * Loads a trained model from a checkpoint file.
 *
 * # Safety
 * `checkpoint_path` must be a nul-terminated string; `out` a valid location.
 */
DermStatus derm_model_load(const char *checkpoint_path, DermModel **out);

/**
 * Class probabilities for one already-normalized image laid out
 * channel-major (`3 x height x width`, RGB).
 *
 * # Safety
 * `model` must be a live handle, `chw` must hold `3 * height * width`
 * doubles and `out_probs` room for 7.
 */
DermStatus derm_model_predict(const DermModel *model,
                              const double *chw,
                              size_t height,
                              size_t width,
                              double *out_probs);

/**
 * Decodes, resizes and normalizes an image file, then classifies it.
 * Writes 7 probabilities and, when `out_label` is non-null, the index of
 * the most probable category.
 *
 * # Safety
 * `model` must be a live handle, `image_path` a nul-terminated string and
 * `out_probs` room for 7 doubles.
 */
DermStatus derm_model_predict_file(const DermModel *model,
                                   const char *image_path,
                                   double *out_probs,
                                   size_t *out_label);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void derm_model_free(DermModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DERMCLASS_H */
