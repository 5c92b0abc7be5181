#ifndef INVERSEMARK_H
#define INVERSEMARK_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call. The first four match the CLI exit codes.
typedef enum ImStatus {
  IM_STATUS_OK = 0,
  IM_STATUS_INVALID_ARGUMENT = 1,
  IM_STATUS_NUMERIC_FAILURE = 2,
  IM_STATUS_IO_ERROR = 3,
  // A Rust panic was caught at the boundary.
  IM_STATUS_INTERNAL = 4,
} ImStatus;

typedef enum ImInjector {
  IM_INJECTOR_GAUSSIAN_SHADING = 0,
  IM_INJECTOR_TREE_RING = 1,
} ImInjector;

typedef enum ImAttack {
  // `param`: quality in 1..=100.
  IM_ATTACK_JPEG = 0,
  // `param`: kept side fraction in (0, 1].
  IM_ATTACK_CROP = 1,
  // `param`: Gaussian radius (sigma).
  IM_ATTACK_BLUR = 2,
  // `param`: noise standard deviation.
  IM_ATTACK_NOISE = 3,
  // `param`: brightness factor.
  IM_ATTACK_BRIGHTNESS = 4,
  // `param`: rotation in degrees.
  IM_ATTACK_ROTATE = 5,
} ImAttack;

typedef struct ImImage ImImage;

// A Gaussian Shading or Tree-Ring key.
typedef struct ImKey ImKey;

// A model, codec and run configuration.
typedef struct ImPipeline ImPipeline;

// Outcome of [`im_extract`]. Fields that do not apply to the key's
// injector are zero (or false).
typedef struct ImExtraction {
  // Bit accuracy, or 1/0 detection for Tree-Ring.
  double score;
  // Number of payload bits read (Gaussian Shading).
  size_t bit_count;
  // Tree-Ring statistics.
  double p_value;
  double mu;
  bool detected;
} ImExtraction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if none.
// The pointer stays valid until the next failing call on the same thread.
const char *im_last_error(void);

// Library version as a static NUL-terminated string.
const char *im_version(void);

// Builds a pipeline.
//
// `config_path` may be NULL for the defaults. `model` is `"zero"`,
// `"linear"` or `"bridge:<addr>"` (NULL means `"linear"`); `codec` is
// `"analytic"` or `"bridge:<addr>"` (NULL means `"analytic"`).
//
// # Safety
// String arguments must be NULL or valid NUL-terminated strings; `out`
// must be a valid pointer.
enum ImStatus im_pipeline_new(const char *config_path,
                              const char *model,
                              const char *codec,
                              struct ImPipeline **out);

// # Safety
// `p` must be NULL or a handle from [`im_pipeline_new`] not yet freed.
void im_pipeline_free(struct ImPipeline *p);

// Image side length the pipeline expects.
//
// # Safety
// `p` must be a live pipeline handle and `side` a valid pointer.
enum ImStatus im_pipeline_resolution(const struct ImPipeline *p, size_t *side);

// Generates the key for image `index` of the pipeline's run seed.
//
// For Gaussian Shading, `payload` may hold `payload_len` bytes of 0/1
// replacing the generated payload; pass NULL to keep it.
//
// # Safety
// `p` must be a live pipeline handle, `payload` NULL or readable for
// `payload_len` bytes, `out` a valid pointer.
enum ImStatus im_key_generate(const struct ImPipeline *p,
                              enum ImInjector injector,
                              size_t index,
                              const uint8_t *payload,
                              size_t payload_len,
                              struct ImKey **out);

// Reads a key file written by [`im_key_save`] or the CLI.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum ImStatus im_key_load(const char *path, struct ImKey **out);

// # Safety
// `key` must be a live key handle and `path` a valid NUL-terminated string.
enum ImStatus im_key_save(const struct ImKey *key, const char *path);

// Which injector a key drives.
//
// # Safety
// `key` must be a live key handle and `injector` a valid pointer.
enum ImStatus im_key_injector(const struct ImKey *key, enum ImInjector *injector);

// Copies the payload as 0/1 bytes. `len` receives the payload length; when
// `cap` is smaller nothing is copied and InvalidArgument is returned.
// Tree-Ring keys report a length of 0.
//
// # Safety
// `key` must be a live key handle, `bits` NULL or writable for `cap` bytes,
// `len` a valid pointer.
enum ImStatus im_key_payload(const struct ImKey *key, uint8_t *bits, size_t cap, size_t *len);

// # Safety
// `key` must be NULL or a key handle not yet freed.
void im_key_free(struct ImKey *key);

// Copies a planar image; values must lie in `[0, 1]`.
//
// # Safety
// `data` must be readable for `channels * height * width` doubles and
// `out` a valid pointer.
enum ImStatus im_image_new(size_t channels,
                           size_t height,
                           size_t width,
                           const double *data,
                           struct ImImage **out);

// Decodes an image file (PNG or JPEG).
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum ImStatus im_image_load(const char *path, struct ImImage **out);

// Writes an 8-bit PNG.
//
// # Safety
// `img` must be a live image handle and `path` a valid NUL-terminated string.
enum ImStatus im_image_save_png(const struct ImImage *img, const char *path);

// # Safety
// `img` must be a live image handle; the three outputs valid pointers.
enum ImStatus im_image_shape(const struct ImImage *img,
                             size_t *channels,
                             size_t *height,
                             size_t *width);

// Copies the planar pixel data into `data`, which must hold at least
// `channels * height * width` doubles (`cap`).
//
// # Safety
// `img` must be a live image handle and `data` writable for `cap` doubles.
enum ImStatus im_image_data(const struct ImImage *img, double *data, size_t cap);

// # Safety
// `img` must be NULL or an image handle not yet freed.
void im_image_free(struct ImImage *img);

// Watermarks `cover` (already at the pipeline resolution). `seed` drives
// the initial noise. `psnr` and `ssim` may be NULL.
//
// # Safety
// Handles must be live; `out` a valid pointer; `psnr`/`ssim` NULL or valid.
enum ImStatus im_embed(const struct ImPipeline *p,
                       const struct ImKey *key,
                       const struct ImImage *cover,
                       uint64_t seed,
                       struct ImImage **out,
                       double *psnr,
                       double *ssim);

// Inverts `img` and reads the watermark. For Gaussian Shading keys the
// recovered bits are copied into `bits` when it is non-NULL and `cap` is
// large enough.
//
// # Safety
// Handles must be live; `result` a valid pointer; `bits` NULL or writable
// for `cap` bytes.
enum ImStatus im_extract(const struct ImPipeline *p,
                         const struct ImKey *key,
                         const struct ImImage *img,
                         struct ImExtraction *result,
                         uint8_t *bits,
                         size_t cap);

// Applies one distortion. `seed` drives the stochastic ones (crop, noise).
//
// # Safety
// `img` must be a live image handle and `out` a valid pointer.
enum ImStatus im_attack(const struct ImImage *img,
                        enum ImAttack op,
                        double param,
                        uint64_t seed,
                        struct ImImage **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVERSEMARK_H */
