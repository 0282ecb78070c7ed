#ifndef IRBSEG_H
#define IRBSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum IrbStatus {
  IRB_STATUS_OK = 0,
  IRB_STATUS_NULL_POINTER = 1,
  IRB_STATUS_INVALID_ARGUMENT = 2,
  IRB_STATUS_IO = 3,
  IRB_STATUS_LOAD = 4,
  IRB_STATUS_VALIDATION = 5,
  IRB_STATUS_CAPACITY = 6,
  IRB_STATUS_EVALUATION = 7,
  IRB_STATUS_CONTRACT = 8,
  IRB_STATUS_CONFIG = 9,
  IRB_STATUS_PANIC = 10,
  IRB_STATUS_OTHER = 11,
} IrbStatus;

// Opaque confusion-matrix accumulator.
typedef struct IrbConfusion IrbConfusion;

// Opaque dataset manifest.
typedef struct IrbManifest IrbManifest;

// Opaque trained model restored from a checkpoint directory.
typedef struct IrbModel IrbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, empty after a success.
//
// The pointer stays valid until the next irbseg call on the same thread.
const char *irb_last_error(void);

// Library version as a static NUL-terminated string.
const char *irb_version(void);

// Percentage change of `new_value` over `baseline`.
//
// # Safety
// `out` must be null or valid for one `double` write.
enum IrbStatus irb_relative_improvement(double new_value, double baseline, double *out);

// Orders `n` foreground classes worst to best by IoU; NaN means undefined and ranks as 0.
//
// # Safety
// `class_ids` and `iou` must be readable for `n` elements, `out_ranking` writable for `n`.
enum IrbStatus irb_rank_classes(const uint8_t *class_ids,
                                const double *iou,
                                size_t n,
                                uint8_t *out_ranking);

// Splits `total` blend images over `n` ranked classes (worst first) by `weights`.
//
// `out_counts[i]` receives the count for `ranking[i]`.
//
// # Safety
// `ranking` and `weights` must be readable for `n` elements, `out_counts` writable for `n`.
enum IrbStatus irb_allocate_blend(size_t total,
                                  const uint8_t *ranking,
                                  const uint32_t *weights,
                                  size_t n,
                                  size_t *out_counts);

// Restyles an interleaved RGB `source` with the low-frequency amplitude of `target`.
//
// # Safety
// `source`, `target` and `out` must each span `width * height * 3` bytes.
enum IrbStatus irb_spectral_blend(const uint8_t *source,
                                  const uint8_t *target,
                                  uint32_t width,
                                  uint32_t height,
                                  double beta,
                                  uint8_t *out);

// New accumulator for classes `0..num_classes`, class 0 being background.
//
// # Safety
// `out` must be null or valid for one pointer write.
enum IrbStatus irb_confusion_new(uint32_t num_classes, struct IrbConfusion **out);

// Adds `len` (ground truth, prediction) label pairs.
//
// # Safety
// `cm` must come from [`irb_confusion_new`]; `gt` and `pred` must span `len` bytes.
enum IrbStatus irb_confusion_accumulate(struct IrbConfusion *cm,
                                        const uint8_t *gt,
                                        const uint8_t *pred,
                                        size_t len);

// Writes per-class IoU and recall (NaN where undefined) plus their means.
//
// Any output pointer may be null to skip it; per-class arrays hold `num_classes` doubles.
//
// # Safety
// `cm` must come from [`irb_confusion_new`]; non-null outputs must be writable.
enum IrbStatus irb_confusion_scores(const struct IrbConfusion *cm,
                                    double *out_iou,
                                    double *out_acc,
                                    double *out_miou,
                                    double *out_macc);

// # Safety
// `cm` must be null or come from [`irb_confusion_new`], and not be used afterwards.
void irb_confusion_free(struct IrbConfusion *cm);

// Loads and validates a JSON manifest.
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for one pointer write.
enum IrbStatus irb_manifest_load(const char *path, struct IrbManifest **out);

// Number of samples, 0 for null.
//
// # Safety
// `manifest` must be null or come from [`irb_manifest_load`].
size_t irb_manifest_len(const struct IrbManifest *manifest);

// # Safety
// `manifest` must be null or come from [`irb_manifest_load`], and not be used afterwards.
void irb_manifest_free(struct IrbManifest *manifest);

// # Safety
// `checkpoint_dir` must be a NUL-terminated string; `out` valid for one pointer write.
enum IrbStatus irb_model_open(const char *checkpoint_dir, struct IrbModel **out);

// Number of output classes, 0 for null.
//
// # Safety
// `model` must be null or come from [`irb_model_open`].
uint32_t irb_model_num_classes(const struct IrbModel *model);

// Predicts one label per pixel of an interleaved RGB image.
//
// Without `resize`, both sides must be multiples of 8.
//
// # Safety
// `model` must come from [`irb_model_open`]; `rgb` spans `width * height * 3`
// bytes and `out_labels` `width * height` bytes.
enum IrbStatus irb_model_predict(const struct IrbModel *model,
                                 const uint8_t *rgb,
                                 uint32_t width,
                                 uint32_t height,
                                 bool resize,
                                 uint8_t *out_labels);

// Scores the model on every sample of `manifest`.
//
// # Safety
// Handles must come from their constructors; outputs valid for one `double` write each.
enum IrbStatus irb_model_evaluate(const struct IrbModel *model,
                                  const struct IrbManifest *manifest,
                                  double *out_miou,
                                  double *out_macc);

// # Safety
// `model` must be null or come from [`irb_model_open`], and not be used afterwards.
void irb_model_free(struct IrbModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRBSEG_H */
