#ifndef PIXCUE_H
#define PIXCUE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum PixcueStatus {
  PIXCUE_STATUS_OK = 0,
  PIXCUE_STATUS_NULL_POINTER = 1,
  PIXCUE_STATUS_INVALID_ARGUMENT = 2,
  PIXCUE_STATUS_SHAPE = 3,
  PIXCUE_STATUS_NON_FINITE = 4,
  PIXCUE_STATUS_NOT_NORMALIZED = 5,
  PIXCUE_STATUS_FORMAT = 6,
  PIXCUE_STATUS_IO = 7,
  PIXCUE_STATUS_INTERNAL = 8,
} PixcueStatus;

/*
 Opaque trained network.
 */
typedef struct PixcueModel PixcueModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread; empty after success.
 The pointer stays valid until the next call into this library on the
 same thread.
 */
const char *pixcue_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *pixcue_version(void);

/*
 Loads a `.pxc` checkpoint. On success `*out` owns a model that must be
 released with [`pixcue_model_free`].

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PixcueStatus pixcue_model_load(const char *path, struct PixcueModel **out);

/*
 Creates an untrained model with seeded initialization.

 # Safety
 `out` must be a valid pointer.
 */
enum PixcueStatus pixcue_model_init(size_t iterations,
                                    size_t hidden_channels,
                                    uint32_t n_bits,
                                    uint64_t seed,
                                    struct PixcueModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void pixcue_model_free(struct PixcueModel *model);

/*
 Number of intensity classes the model predicts, or 0 for null.

 # Safety
 `model` must be null or a live model.
 */
size_t pixcue_model_classes(const struct PixcueModel *model);

/*
 Runs the network on undersampled k-space.

 `kspace` holds `2*n*n` values and `mask` `n` bytes. `recon` receives
 `n*n` values. `variance` (`n*n`) and `probs` (`n*n*classes`) are optional
 and may be null.

 # Safety
 Non-null pointers must reference buffers of the stated lengths.
 */
enum PixcueStatus pixcue_reconstruct(const struct PixcueModel *model,
                                     size_t n,
                                     const double *kspace,
                                     const uint8_t *mask,
                                     double *recon,
                                     double *variance,
                                     double *probs);

/*
 Exact class variance per pixel of a `n_pixels x classes` probability array.

 # Safety
 `probs` must hold `n_pixels*classes` values and `out` `n_pixels`.
 */
enum PixcueStatus pixcue_exact_variance(const double *probs,
                                        size_t n_pixels,
                                        size_t classes,
                                        double *out);

/*
 Peak-width variance estimate per pixel.

 # Safety
 `probs` must hold `n_pixels*classes` values and `out` `n_pixels`.
 */
enum PixcueStatus pixcue_fast_variance(const double *probs,
                                       size_t n_pixels,
                                       size_t classes,
                                       double *out);

/*
 Seeded random row mask with a fully sampled center block.

 # Safety
 `out` must hold `n` bytes.
 */
enum PixcueStatus pixcue_mask_random(size_t n,
                                     double accel,
                                     double center_fraction,
                                     uint64_t seed,
                                     uint8_t *out);

/*
 Equidistant row mask with a fully sampled center block.

 # Safety
 `out` must hold `n` bytes.
 */
enum PixcueStatus pixcue_mask_equidistant(size_t n,
                                          double accel,
                                          double center_fraction,
                                          uint8_t *out);

/*
 Unitary centered forward 2D DFT of an interleaved complex image.

 # Safety
 `input` and `out` must each hold `2*n*n` values and must not overlap.
 */
enum PixcueStatus pixcue_dft2(size_t n, const double *input, double *out);

/*
 Unitary centered inverse 2D DFT of interleaved k-space.

 # Safety
 `input` and `out` must each hold `2*n*n` values and must not overlap.
 */
enum PixcueStatus pixcue_idft2(size_t n, const double *input, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIXCUE_H */
