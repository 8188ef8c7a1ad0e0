#ifndef SPECLEARN_H
#define SPECLEARN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_INVALID_ARGUMENT = 2,
  SL_STATUS_SHAPE = 3,
  SL_STATUS_PLACEMENT = 4,
  SL_STATUS_SYNTHESIS = 5,
  SL_STATUS_SCHEMA = 6,
  SL_STATUS_UNTRAINED = 7,
  SL_STATUS_CONFIG = 8,
  SL_STATUS_IO = 9,
  SL_STATUS_PANIC = 10,
} SlStatus;

typedef enum SlUserType {
  SL_USER_TYPE_CAREFUL = 0,
  SL_USER_TYPE_NORMAL = 1,
  SL_USER_TYPE_AGGRESSIVE = 2,
} SlUserType;

typedef enum SlSplit {
  SL_SPLIT_TRAIN = 0,
  SL_SPLIT_TEST = 1,
} SlSplit;

typedef struct SlModel SlModel;

typedef struct SlScene SlScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sl_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * Valid until the next call into the library from the same thread.
 */
const char *sl_last_error(void);

/**
 * Generates a scene; `split` is an [`SlSplit`] value and
 * `object_count == 0` draws the count at random.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SlStatus sl_scene_generate(uint64_t seed,
                                int32_t split,
                                size_t object_count,
                                struct SlScene **out);

/**
 * Loads `scene.json` from the directory `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SlStatus sl_scene_load(const char *dir, struct SlScene **out);

/**
 * Writes `scene.json` and `scene.png` into the existing directory `dir`.
 *
 * # Safety
 * `scene` must come from this library and `dir` be a NUL-terminated string.
 */
enum SlStatus sl_scene_save(const struct SlScene *scene, const char *dir);

/**
 * # Safety
 * `scene` must be null or a handle from this library not yet freed.
 */
void sl_scene_free(struct SlScene *scene);

/**
 * # Safety
 * `scene` must be a live handle and `out` a valid pointer.
 */
enum SlStatus sl_scene_object_count(const struct SlScene *scene, size_t *out);

/**
 * Number of doubles [`sl_scene_render`] writes.
 */
size_t sl_image_len(void);

/**
 * Renders the scene as row-major H x W x 3 intensities in [0, 1].
 *
 * # Safety
 * `pixels` must point to `len` writable doubles.
 */
enum SlStatus sl_scene_render(const struct SlScene *scene, double *pixels, size_t len);

/**
 * Point at parameter `t` of the curve with control point `(x, y)`.
 *
 * # Safety
 * `out_xy` must point to two writable doubles.
 */
enum SlStatus sl_bezier_eval(double x, double y, double t, double *out_xy);

/**
 * Ground-truth validity of the curve through `(x, y)` for `user_type`,
 * an [`SlUserType`] value.
 *
 * # Safety
 * `scene` must be a live handle and `out` a valid pointer.
 */
enum SlStatus sl_oracle_validity(const struct SlScene *scene,
                                 double x,
                                 double y,
                                 int32_t user_type,
                                 bool *out);

/**
 * Loads a checkpoint from `<stem>.spc` and `<stem>.json`.
 *
 * # Safety
 * `stem` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SlStatus sl_model_load(const char *stem, struct SlModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void sl_model_free(struct SlModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum SlStatus sl_model_user_type(const struct SlModel *model, enum SlUserType *out);

/**
 * Predicted probability that the curve through `(x, y)` is valid in `scene`.
 *
 * # Safety
 * `model` and `scene` must be live handles and `out` a valid pointer.
 */
enum SlStatus sl_model_predict(const struct SlModel *model,
                               const struct SlScene *scene,
                               double x,
                               double y,
                               double *out);

/**
 * Latent-space refinement from `(x, y)`; writes the final control point,
 * its score and the number of steps taken.
 *
 * # Safety
 * `model` and `scene` must be live handles, `out_xy` must point to two
 * writable doubles and the remaining out-pointers must be valid.
 */
enum SlStatus sl_model_refine(const struct SlModel *model,
                              const struct SlScene *scene,
                              double x,
                              double y,
                              size_t max_steps,
                              double step_size,
                              double *out_xy,
                              double *out_score,
                              size_t *out_steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECLEARN_H */
