#ifndef XLALIGN_H
#define XLALIGN_H

#pragma once

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum XlLayerPooling {
  XL_LAYER_POOLING_MEAN = 0,
  XL_LAYER_POOLING_MAX = 1,
} XlLayerPooling;

typedef enum XlPooling {
  XL_POOLING_LAST_TOKEN = 0,
  XL_POOLING_WEIGHTED_AVERAGE = 1,
} XlPooling;

typedef enum XlStatus {
  XL_STATUS_OK = 0,
  XL_STATUS_NULL_POINTER = 1,
  XL_STATUS_INVALID_UTF8 = 2,
  XL_STATUS_IO = 3,
  XL_STATUS_VALIDATION = 4,
  XL_STATUS_INVALID_ARGUMENT = 5,
  XL_STATUS_INSUFFICIENT_DATA = 6,
  XL_STATUS_PANIC = 7,
} XlStatus;

// Opaque handle to a validated embedding dump.
typedef struct XlDump XlDump;

// Opaque handle to a per-layer alignment profile.
typedef struct XlProfile XlProfile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *xl_version(void);

// Message for the last failing call on this thread, or NULL.
const char *xl_last_error_message(void);

// Reads and validates the dump whose manifest is at `manifest_path`.
//
// # Safety
// `manifest_path` must be a NUL-terminated string; `out` a writable pointer.
enum XlStatus xl_dump_read(const char *manifest_path, struct XlDump **out);

// # Safety
// `dump` must come from [`xl_dump_read`] and not have been freed.
void xl_dump_free(struct XlDump *dump);

// # Safety
// `dump` must be a live handle or NULL (returns 0).
size_t xl_dump_layer_count(const struct XlDump *dump);

// # Safety
// `dump` must be a live handle or NULL (returns 0).
size_t xl_dump_sentence_count(const struct XlDump *dump);

// # Safety
// `dump` must be a live handle or NULL (returns 0).
size_t xl_dump_dim(const struct XlDump *dump);

// Language label, owned by the handle.
//
// # Safety
// `dump` must be a live handle or NULL (returns NULL).
const char *xl_dump_language(const struct XlDump *dump);

// Model id, owned by the handle.
//
// # Safety
// `dump` must be a live handle or NULL (returns NULL).
const char *xl_dump_model_id(const struct XlDump *dump);

// Writes a sentence-level dump. `data` holds `layer_count` consecutive
// `sentence_count x dim` row-major matrices.
//
// # Safety
// String arguments must be NUL-terminated; `data` must hold
// `layer_count * sentence_count * dim` floats.
enum XlStatus xl_dump_write_sentence(const char *manifest_path,
                                     const char *model_id,
                                     const char *language,
                                     const char *corpus_id,
                                     enum XlPooling pooling,
                                     size_t layer_count,
                                     size_t sentence_count,
                                     size_t dim,
                                     const float *data);

// Cosine of two `dim`-vectors; `out_degenerate` (may be NULL) is set when
// either norm is below 1e-12, in which case the value is 0.
//
// # Safety
// `u` and `v` must hold `dim` floats; `out_value` must be writable.
enum XlStatus xl_cosine(const float *u,
                        const float *v,
                        size_t dim,
                        double *out_value,
                        bool *out_degenerate);

// Score of an `n x n` row-major similarity matrix: the fraction of diagonal
// entries strictly greater than all other entries of their row and column.
//
// # Safety
// `values` must hold `n * n` doubles; `out` must be writable.
enum XlStatus xl_layer_score(const double *values, size_t n, double *out);

// Builds the cosine matrix of two `n x d` embedding matrices (`a` rows
// against `b` rows) and scores it.
//
// # Safety
// `a` and `b` must hold `n * d` floats; `out` must be writable.
enum XlStatus xl_embedding_layer_score(const float *a,
                                       const float *b,
                                       size_t n,
                                       size_t d,
                                       double *out);

// Scores `lang` against `pivot` at every layer. `subset` (may be NULL when
// `subset_len` is 0) restricts the headline pooled score to those layers.
//
// # Safety
// Handles must be live; `subset` must hold `subset_len` entries; `out`
// must be writable. Free the result with [`xl_profile_free`].
enum XlStatus xl_alignment(const struct XlDump *pivot,
                           const struct XlDump *lang,
                           enum XlPooling pooling,
                           enum XlLayerPooling layer_pool,
                           const size_t *subset,
                           size_t subset_len,
                           struct XlProfile **out);

// # Safety
// `profile` must come from [`xl_alignment`] and not have been freed.
void xl_profile_free(struct XlProfile *profile);

// # Safety
// `profile` must be a live handle or NULL (returns 0).
size_t xl_profile_layer_count(const struct XlProfile *profile);

// Copies up to `len` per-layer scores into `out`.
//
// # Safety
// `profile` must be live; `out` must hold `len` doubles.
enum XlStatus xl_profile_layer_scores(const struct XlProfile *profile, double *out, size_t len);

// Mean over all layers, max over all layers, and the headline score
// (requested pooling, over the subset if one was given). Any output may be
// NULL.
//
// # Safety
// `profile` must be live; non-NULL outputs must be writable.
enum XlStatus xl_profile_pooled(const struct XlProfile *profile,
                                double *out_mean,
                                double *out_max,
                                double *out_score);

// Probability that a random `n x n` similarity matrix scores at least `k/n`.
//
// # Safety
// `out` must be writable.
enum XlStatus xl_random_baseline(uint64_t n, uint64_t k, double *out);

// Pearson r and its two-sided p-value.
//
// # Safety
// `xs`, `ys` must hold `len` doubles; outputs must be writable (`out_p`
// may be NULL).
enum XlStatus xl_pearson(const double *xs,
                         const double *ys,
                         size_t len,
                         double *out_r,
                         double *out_p);

// Least-squares line through `(xs[i], ys[i])`.
//
// # Safety
// `xs`, `ys` must hold `len` doubles; outputs must be writable.
enum XlStatus xl_fit_line(const double *xs,
                          const double *ys,
                          size_t len,
                          double *out_slope,
                          double *out_intercept);

// Pools `t x d` token embeddings into one `d`-vector.
//
// # Safety
// `tokens` must hold `t * d` floats and `out` must hold `d` floats.
enum XlStatus xl_pool_tokens(const float *tokens,
                             size_t t,
                             size_t d,
                             enum XlPooling method,
                             float *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* XLALIGN_H */
