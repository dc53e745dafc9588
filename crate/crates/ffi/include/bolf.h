#ifndef BOLF_H
#define BOLF_H

#include <stddef.h>
#include <stdint.h>

/*
 Result of every call.
 */
typedef enum BolfStatus {
  BOLF_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  BOLF_STATUS_NULL_ARGUMENT = 1,
  /*
   Bad configuration file or value.
   */
  BOLF_STATUS_CONFIG = 2,
  /*
   Missing or malformed input data or weights.
   */
  BOLF_STATUS_DATA = 3,
  /*
   Non-finite values or another numerical failure.
   */
  BOLF_STATUS_NUMERIC = 4,
  /*
   A buffer length does not match the model's input or output size.
   */
  BOLF_STATUS_SHAPE = 5,
  /*
   A string argument is not valid UTF-8.
   */
  BOLF_STATUS_UTF8 = 6,
  /*
   An internal panic was caught at the boundary.
   */
  BOLF_STATUS_PANIC = 7,
} BolfStatus;

/*
 A loaded model. Opaque to C.
 */
typedef struct BolfModel BolfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a model. `config_path` may be null for the default configuration.
 `weights_path` may be null to use the configuration's weights path.

 # Safety
 String arguments must be null or nul-terminated; `out` must be writable.
 */
enum BolfStatus bolf_model_load(const char *config_path,
                                const char *weights_path,
                                struct BolfModel **out);

/*
 Creates an untrained model with the configuration's initializer.

 # Safety
 `config_path` must be null or nul-terminated; `out` must be writable.
 */
enum BolfStatus bolf_model_init(const char *config_path, uint64_t seed, struct BolfModel **out);

/*
 Releases a model. Null is accepted and ignored.

 # Safety
 `model` must come from this library and must not be used afterwards.
 */
void bolf_model_free(struct BolfModel *model);

/*
 Input image size (`height × width × channels`, row-major, values in
 `[0, 1]`) and the number of patches in a heatmap.

 # Safety
 `model` must be a live handle; output pointers must be writable.
 */
enum BolfStatus bolf_model_dims(const struct BolfModel *model,
                                size_t *height,
                                size_t *width,
                                size_t *channels,
                                size_t *patches);

/*
 Probability that the image is manipulated.

 # Safety
 `model` must be a live handle, `pixels` must hold `len` floats and
 `probability` must be writable.
 */
enum BolfStatus bolf_predict(const struct BolfModel *model,
                             const float *pixels,
                             size_t len,
                             double *probability);

/*
 Attention-rollout heatmap over the patches (row-major patch grid, sums to
 1) plus the manipulation probability. `probability` may be null.

 # Safety
 `model` must be a live handle, `pixels` must hold `len` floats and
 `heatmap` must have room for `heatmap_len` doubles.
 */
enum BolfStatus bolf_rollout(const struct BolfModel *model,
                             const float *pixels,
                             size_t len,
                             double *heatmap,
                             size_t heatmap_len,
                             double *probability);

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *bolf_last_error(void);

/*
 Library version as a static nul-terminated string.
 */
const char *bolf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOLF_H */
