#ifndef PDL_H
#define PDL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdlStatus {
  PDL_STATUS_OK = 0,
  PDL_STATUS_NULL_POINTER = 1,
  PDL_STATUS_INVALID_ARGUMENT = 2,
  PDL_STATUS_IO = 3,
  PDL_STATUS_FORMAT = 4,
  PDL_STATUS_MISSING_SECTION = 5,
  PDL_STATUS_DIMENSION_MISMATCH = 6,
  PDL_STATUS_INSUFFICIENT_DATA = 7,
  PDL_STATUS_DEGENERATE = 8,
  PDL_STATUS_PANIC = 9,
  PDL_STATUS_OTHER = 10,
} PdlStatus;

/**
 * A model file loaded into an encoding pipeline, plus its classifier when
 * present.
 */
typedef struct PdlModel PdlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next `pdl_*` call on the same thread.
 */
const char *pdl_last_error_message(void);

/**
 * Load the model file at `path` (UTF-8, nul-terminated). With `rescale`
 * nonzero, selected features pass through the stored rescaling transform.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum PdlStatus pdl_model_open(const char *path, int32_t rescale, struct PdlModel **out);

/**
 * Release a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`pdl_model_open`] and not be used afterwards.
 */
void pdl_model_free(struct PdlModel *model);

/**
 * Length of the feature vector written by [`pdl_model_encode`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum PdlStatus pdl_model_feature_len(const struct PdlModel *model, size_t *out);

/**
 * Codes in the encoding dictionary, patch side and channel count.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PdlStatus pdl_model_shape(const struct PdlModel *model,
                               size_t *dictionary_size,
                               size_t *patch_side,
                               size_t *channels);

/**
 * Number of classes of the stored classifier, 0 if there is none.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PdlStatus pdl_model_num_classes(const struct PdlModel *model, size_t *out);

/**
 * Encode, pool and map one channel-planar 8-bit image into `out`, which
 * must hold exactly [`pdl_model_feature_len`] values.
 *
 * # Safety
 * `pixels` must hold `width * height * channels` bytes and `out` `out_len`
 * doubles.
 */
enum PdlStatus pdl_model_encode(const struct PdlModel *model,
                                const uint8_t *pixels,
                                size_t width,
                                size_t height,
                                size_t channels,
                                double *out,
                                size_t out_len);

/**
 * Predicted class of one image using the model's classifier.
 *
 * # Safety
 * As for [`pdl_model_encode`]; `class_out` must be valid.
 */
enum PdlStatus pdl_model_predict(const struct PdlModel *model,
                                 const uint8_t *pixels,
                                 size_t width,
                                 size_t height,
                                 size_t channels,
                                 size_t *class_out);

/**
 * Affinity propagation on an `n × n` similarity matrix whose diagonal holds
 * the preferences. Writes the exemplar count, the exemplar indices
 * (ascending, `exemplars` must hold `n` entries) and each point's exemplar.
 *
 * # Safety
 * `similarity` must hold `n * n` doubles, `exemplars` and `assignment` `n`
 * entries each.
 */
enum PdlStatus pdl_affinity_propagation(const double *similarity,
                                        size_t n,
                                        double damping,
                                        size_t max_iters,
                                        size_t convergence_window,
                                        size_t *num_exemplars,
                                        size_t *exemplars,
                                        size_t *assignment);

/**
 * Choose exactly `k` exemplars from an `m × m` covariance matrix of pooled
 * responses, with default affinity propagation settings.
 *
 * # Safety
 * `covariance` must hold `m * m` doubles, `exemplars` `k` entries and
 * `assignment` `m` entries.
 */
enum PdlStatus pdl_select_k(const double *covariance,
                            size_t m,
                            size_t k,
                            size_t *exemplars,
                            size_t *assignment);

/**
 * The pairwise similarity `2ρ - 2` of a covariance matrix with `preference`
 * on the diagonal, written to `out` (`m * m` doubles).
 *
 * # Safety
 * Buffers must hold `m * m` doubles.
 */
enum PdlStatus pdl_similarity(const double *covariance, size_t m, double preference, double *out);

/**
 * Nyström reconstruction `W pinv(C_SS) Wᵀ` of the `m × m` PSD matrix `c`
 * from the `k` column indices in `subset`, written to `out`.
 *
 * # Safety
 * `c` and `out` must hold `m * m` doubles and `subset` `k` indices.
 */
enum PdlStatus pdl_nystrom_reconstruct(const double *c,
                                       size_t m,
                                       const size_t *subset,
                                       size_t k,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDL_H */
