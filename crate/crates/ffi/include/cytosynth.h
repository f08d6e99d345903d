#ifndef CYTOSYNTH_H
#define CYTOSYNTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_SHAPE = 3,
  CS_STATUS_NUMERIC = 4,
  CS_STATUS_CONTRACT = 5,
  CS_STATUS_IO = 6,
  CS_STATUS_CHECKPOINT = 7,
  CS_STATUS_PANIC = 8,
} CsStatus;

typedef enum CsClass {
  CS_CLASS_BENIGN = 0,
  CS_CLASS_MALIGNANT = 1,
} CsClass;

/**
 * Trained mask-to-image generator.
 */
typedef struct CsCgan CsCgan;

/**
 * Trained class-specific mask generator.
 */
typedef struct CsMaskGan CsMaskGan;

/**
 * Mask extraction parameters; start from [`cs_extract_params_default`].
 */
typedef struct CsExtractParams {
  /**
   * Odd local-mean window side.
   */
  size_t window;
  double offset;
  /**
   * Mixture components.
   */
  size_t k;
  size_t max_iter;
  double tol;
  uint64_t seed;
} CsExtractParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cs_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *cs_last_error_message(void);

struct CsExtractParams cs_extract_params_default(void);

/**
 * Nuclei mask of a planar RGB image. `out_mask` holds `height * width` bytes.
 *
 * # Safety
 * `rgb` must point to `3 * height * width` floats and `out_mask` to
 * `height * width` writable bytes.
 */
enum CsStatus cs_extract_mask(const float *rgb,
                              size_t height,
                              size_t width,
                              struct CsExtractParams params,
                              uint8_t *out_mask);

/**
 * Loads a mask-to-image checkpoint and its manifest.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CsStatus cs_cgan_load(const char *path, struct CsCgan **out);

/**
 * # Safety
 * `handle` must come from [`cs_cgan_load`] and not be used afterwards. NULL is ignored.
 */
void cs_cgan_free(struct CsCgan *handle);

/**
 * Side length the generator works at; 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t cs_cgan_image_size(const struct CsCgan *handle);

/**
 * Image for a mask; `out_rgb` holds `3 * height * width` floats.
 *
 * # Safety
 * `handle` must be live; `mask` must hold `height * width` bytes of 0/1.
 */
enum CsStatus cs_cgan_generate(const struct CsCgan *handle,
                               const uint8_t *mask,
                               size_t height,
                               size_t width,
                               float *out_rgb);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CsStatus cs_maskgan_load(const char *path, struct CsMaskGan **out);

/**
 * # Safety
 * `handle` must come from [`cs_maskgan_load`] and not be used afterwards. NULL is ignored.
 */
void cs_maskgan_free(struct CsMaskGan *handle);

/**
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t cs_maskgan_image_size(const struct CsMaskGan *handle);

/**
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t cs_maskgan_latent_dim(const struct CsMaskGan *handle);

/**
 * Class the mask generator was trained on.
 *
 * # Safety
 * `handle` must be live; `out` writable.
 */
enum CsStatus cs_maskgan_class(const struct CsMaskGan *handle, enum CsClass *out);

/**
 * Mask for latent `z`; `out_mask` holds `image_size^2` bytes.
 *
 * # Safety
 * `handle` must be live; `z` must hold `dim` doubles.
 */
enum CsStatus cs_maskgan_generate(const struct CsMaskGan *handle,
                                  const double *z,
                                  size_t dim,
                                  uint8_t *out_mask);

/**
 * Standard-normal latent number `index` of the `master_seed` stream.
 *
 * # Safety
 * `out` must hold `dim` writable doubles.
 */
enum CsStatus cs_sample_latent(uint64_t master_seed, uint64_t index, double *out, size_t dim);

/**
 * Mask from the class model, then the image generated from that mask.
 *
 * # Safety
 * Handles must be live; `z` holds `dim` doubles; `out_mask` holds `s*s`
 * bytes and `out_rgb` `3*s*s` floats where `s` is the shared image size.
 */
enum CsStatus cs_synthesize_sample(const struct CsCgan *cgan,
                                   const struct CsMaskGan *maskgan,
                                   enum CsClass class_,
                                   const double *z,
                                   size_t dim,
                                   uint8_t *out_mask,
                                   float *out_rgb);

/**
 * Conditional discriminator loss on score grids in (0, 1).
 *
 * # Safety
 * Arrays must hold the stated counts; `out` writable.
 */
enum CsStatus cs_cgan_d_loss(const double *d_real,
                             size_t n_real,
                             const double *d_fake,
                             size_t n_fake,
                             double *out);

/**
 * Conditional generator loss: adversarial term plus `lambda` times the MSE
 * between `generated` and `target` (`n_pixels` values each).
 *
 * # Safety
 * Arrays must hold the stated counts; `out` writable.
 */
enum CsStatus cs_cgan_g_loss(const double *d_fake,
                             size_t n_fake,
                             const double *generated,
                             const double *target,
                             size_t n_pixels,
                             double lambda,
                             double *out);

/**
 * Mask-GAN discriminator loss with explicit (smoothed) targets.
 *
 * # Safety
 * Arrays must hold the stated counts; `out` writable.
 */
enum CsStatus cs_gan_d_loss(const double *d_real,
                            size_t n_real,
                            const double *d_fake,
                            size_t n_fake,
                            double real_target,
                            double fake_target,
                            double *out);

/**
 * Mask-GAN generator loss.
 *
 * # Safety
 * `d_fake` must hold `n_fake` doubles; `out` writable.
 */
enum CsStatus cs_gan_g_loss(const double *d_fake, size_t n_fake, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CYTOSYNTH_H */
