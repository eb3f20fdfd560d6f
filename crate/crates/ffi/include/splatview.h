#ifndef SPLATVIEW_H
#define SPLATVIEW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SvStatus {
  SV_STATUS_OK = 0,
  SV_STATUS_INVALID_ARGUMENT = 1,
  SV_STATUS_IO = 2,
  SV_STATUS_PARSE = 3,
  SV_STATUS_UNSUPPORTED = 4,
  SV_STATUS_NON_FINITE = 5,
  SV_STATUS_BEHIND_CAMERA = 6,
  SV_STATUS_PANIC = 7,
} SvStatus;

// An RGB image, row-major, interleaved, values in `[0, 1]`.
typedef struct SvImage SvImage;

// A loaded or generated scene plus its color head.
typedef struct SvScene SvScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sv_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next call on the same thread.
const char *sv_last_error_message(void);

// Loads a scene directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum SvStatus sv_scene_load(const char *dir, struct SvScene **out);

// Generates a synthetic scene. `preset`: 0 textured plane, 1 two walls,
// 2 box corner.
//
// # Safety
// `out` must be writable.
enum SvStatus sv_scene_synth(uint32_t preset,
                             uint32_t views,
                             uint32_t width,
                             uint32_t height,
                             uint64_t seed,
                             struct SvScene **out);

// Writes a scene directory.
//
// # Safety
// `scene` must be a live handle; `dir` a NUL-terminated string.
enum SvStatus sv_scene_save(const struct SvScene *scene, const char *dir);

// Releases a scene. NULL is ignored.
//
// # Safety
// `scene` must come from this library and not be used afterwards.
void sv_scene_free(struct SvScene *scene);

// Number of input views, or 0 for NULL.
//
// # Safety
// `scene` must be a live handle or NULL.
uintptr_t sv_scene_view_count(const struct SvScene *scene);

// Id of the view at `index`.
//
// # Safety
// `scene` must be a live handle; `out` writable.
enum SvStatus sv_scene_view_id(const struct SvScene *scene, uintptr_t index, uint32_t *out);

// Renders a novel view. `rotation` is a row-major world-to-camera 3x3,
// `translation` its 3-vector. Width or height 0 uses the first view's size;
// intrinsics follow the first view rescaled to the output size.
//
// # Safety
// `rotation` must point to 9 doubles, `translation` to 3; `out` writable.
enum SvStatus sv_render(const struct SvScene *scene,
                        const double *rotation,
                        const double *translation,
                        uint32_t width,
                        uint32_t height,
                        uint32_t k,
                        bool fast,
                        struct SvImage **out);

// Renders from the camera of the view with id `view_id`.
//
// # Safety
// `scene` must be a live handle; `out` writable.
enum SvStatus sv_render_view(const struct SvScene *scene,
                             uint32_t view_id,
                             uint32_t k,
                             bool fast,
                             struct SvImage **out);

// Greedy view selection for a pose. Writes up to `capacity` ids in pick
// order, the number written to `count` and the covered score to `coverage`
// (may be NULL).
//
// # Safety
// Pose arrays as in [`sv_render`]; `ids` must hold `capacity` entries.
enum SvStatus sv_select(const struct SvScene *scene,
                        const double *rotation,
                        const double *translation,
                        uint32_t width,
                        uint32_t height,
                        uint32_t k,
                        uint32_t *ids,
                        uintptr_t capacity,
                        uintptr_t *count,
                        double *coverage);

// Image width, or 0 for NULL.
//
// # Safety
// `image` must be a live handle or NULL.
uintptr_t sv_image_width(const struct SvImage *image);

// Image height, or 0 for NULL.
//
// # Safety
// `image` must be a live handle or NULL.
uintptr_t sv_image_height(const struct SvImage *image);

// `width * height * 3` floats, owned by the image.
//
// # Safety
// `image` must be a live handle or NULL.
const float *sv_image_data(const struct SvImage *image);

// Releases an image. NULL is ignored.
//
// # Safety
// `image` must come from this library and not be used afterwards.
void sv_image_free(struct SvImage *image);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLATVIEW_H */
