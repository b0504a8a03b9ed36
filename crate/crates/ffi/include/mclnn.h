#ifndef MCLNN_H
#define MCLNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum MclnnStatus {
  MCLNN_STATUS_OK = 0,
  MCLNN_STATUS_NULL_POINTER = 1,
  MCLNN_STATUS_INVALID_ARGUMENT = 2,
  MCLNN_STATUS_SHAPE = 3,
  MCLNN_STATUS_IO = 4,
  MCLNN_STATUS_FORMAT = 5,
  MCLNN_STATUS_PANIC = 6,
} MclnnStatus;

/**
 * A binary band mask.
 */
typedef struct MclnnMask MclnnMask;

/**
 * A classifier with its parameters and normalization statistics.
 */
typedef struct MclnnModel MclnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *mclnn_last_error(void);

/**
 * Frames one segment must have for a stack of layers with the given
 * orders and `extra_frames` frames left for pooling. Returns 0 if `orders`
 * is null while `layer_count > 0`.
 *
 * # Safety
 * `orders` must point to `layer_count` readable values.
 */
size_t mclnn_segment_size(const size_t *orders, size_t layer_count, size_t extra_frames);

/**
 * Builds the band mask for feature length `l`, width `e`, bandwidth `bw`
 * and overlap `ov`.
 *
 * # Safety
 * `out` must be a valid pointer to write a handle to.
 */
enum MclnnStatus mclnn_mask_generate(size_t l,
                                     size_t e,
                                     size_t bw,
                                     int64_t ov,
                                     struct MclnnMask **out);

/**
 * Mask rows (feature length), or 0 for a null handle.
 *
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t mclnn_mask_rows(const struct MclnnMask *mask);

/**
 * Mask columns (hidden width), or 0 for a null handle.
 *
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t mclnn_mask_cols(const struct MclnnMask *mask);

/**
 * Copies the mask row-major into `out` as 0/1 bytes. `len` must equal
 * rows * cols.
 *
 * # Safety
 * `mask` must be a live handle and `out` must have `len` writable bytes.
 */
enum MclnnStatus mclnn_mask_copy(const struct MclnnMask *mask, uint8_t *out, size_t len);

/**
 * Releases a mask. Null is ignored.
 *
 * # Safety
 * `mask` must be null or a handle not yet freed.
 */
void mclnn_mask_free(struct MclnnMask *mask);

/**
 * Builds a freshly initialized model from a named preset (`table3`,
 * `small`, `gradcheck`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MclnnStatus mclnn_model_build_preset(const char *preset,
                                          size_t class_count,
                                          uint64_t seed,
                                          struct MclnnModel **out);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MclnnStatus mclnn_model_load(const char *path, struct MclnnModel **out);

/**
 * Writes a model file.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum MclnnStatus mclnn_model_save(const struct MclnnModel *model, const char *path);

/**
 * Frames per input segment, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mclnn_model_segment_size(const struct MclnnModel *model);

/**
 * Features per frame, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mclnn_model_feature_length(const struct MclnnModel *model);

/**
 * Number of output classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mclnn_model_class_count(const struct MclnnModel *model);

/**
 * Class probabilities for one segment given row-major by frame
 * (`segment_size * feature_length` values, already normalized).
 *
 * # Safety
 * `model` must be a live handle, `segment` must have `segment_len`
 * readable values and `probabilities` `class_count` writable values.
 */
enum MclnnStatus mclnn_model_forward(const struct MclnnModel *model,
                                     const double *segment,
                                     size_t segment_len,
                                     double *probabilities,
                                     size_t class_count);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void mclnn_model_free(struct MclnnModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCLNN_H */
