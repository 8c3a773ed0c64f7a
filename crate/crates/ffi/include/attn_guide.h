#ifndef ATTN_GUIDE_H
#define ATTN_GUIDE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AgStatus {
  AG_OK = 0,
  /**
   * A required pointer argument was null.
   */
  AG_ERR_NULL = 1,
  /**
   * Arguments violate an operation's preconditions (shapes, ranges).
   */
  AG_ERR_CONTRACT = 2,
  AG_ERR_NUMERIC = 3,
  /**
   * Invalid configuration, including malformed backbone JSON.
   */
  AG_ERR_CONFIG = 4,
  /**
   * Malformed or mismatched checkpoint.
   */
  AG_ERR_LOAD = 5,
  AG_ERR_IO = 6,
  AG_ERR_DEGENERATE = 7,
  /**
   * A Rust panic was caught; the handle involved should be freed.
   */
  AG_ERR_PANIC = 8,
  AG_ERR_UTF8 = 9,
} AgStatus;

/**
 * Opaque model handle.
 */
typedef struct AgModel AgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (truncated
 * and NUL-terminated if `len` is too small) and returns the full message
 * length in bytes, excluding the terminator. `buf` may be null to query
 * the length.
 */
size_t ag_last_error(char *buf, size_t len);

/**
 * Creates a freshly initialized model. `backbone_json` may be null for the
 * default architecture.
 */
enum AgStatus ag_model_new(const char *backbone_json,
                           size_t classes,
                           size_t input_size,
                           uint64_t seed,
                           struct AgModel **out);

/**
 * Loads checkpoint weights into a model with the given architecture.
 */
enum AgStatus ag_model_load(const char *path,
                            const char *backbone_json,
                            size_t classes,
                            size_t input_size,
                            struct AgModel **out);

enum AgStatus ag_model_save(const struct AgModel *model, const char *path);

/**
 * Releases a model; null is ignored.
 */
void ag_model_free(struct AgModel *model);

/**
 * Number of classes, or 0 for a null handle.
 */
size_t ag_model_classes(const struct AgModel *model);

/**
 * Square input side length, or 0 for a null handle.
 */
size_t ag_model_input_size(const struct AgModel *model);

/**
 * Class probabilities for `n` grayscale images of `height`×`width`
 * (row-major, values in [0, 1]). Writes `n × classes` floats to `probs`.
 */
enum AgStatus ag_model_predict(const struct AgModel *model,
                               const float *pixels,
                               size_t n,
                               size_t height,
                               size_t width,
                               float *probs);

/**
 * Soft attention maps for one image: writes `classes × S × S` floats, where
 * `S` is the model input size; each class slice sums to 1.
 */
enum AgStatus ag_model_attention(const struct AgModel *model,
                                 const float *pixels,
                                 size_t height,
                                 size_t width,
                                 float *maps);

/**
 * Guidance term for one sample: `target` holds `classes × height × width`
 * attention values, `mask` one `height × width` focus region (nonzero means
 * annotated) shared by every class.
 */
enum AgStatus ag_guidance_term(const double *target,
                               size_t classes,
                               size_t height,
                               size_t width,
                               const uint8_t *mask,
                               double lambda,
                               double *out);

/**
 * Filled bounding box of a non-empty mask; `out` receives 0/1 bytes.
 */
enum AgStatus ag_mask_to_bbox(const uint8_t *mask, size_t height, size_t width, uint8_t *out);

/**
 * Skeleton scribble of a non-empty mask, dilated to `line_width` pixels.
 */
enum AgStatus ag_mask_to_scribble(const uint8_t *mask,
                                  size_t height,
                                  size_t width,
                                  size_t line_width,
                                  uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTN_GUIDE_H */
