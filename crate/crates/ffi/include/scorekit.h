/* C interface for the scorekit scoring-reliability toolkit. */

#ifndef SCOREKIT_H
#define SCOREKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of an FFI call.
typedef enum {
  // Success; out-parameters are populated.
  SK_STATUS_OK = 0,
  // A required pointer argument was NULL.
  SK_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  SK_STATUS_INVALID_UTF8 = 2,
  // The underlying file could not be read or parsed.
  SK_STATUS_IO_ERROR = 3,
  // An argument was out of range or inconsistent.
  SK_STATUS_INVALID_ARGUMENT = 4,
  // The statistic is undefined for this input (e.g. degenerate marginals).
  SK_STATUS_DEGENERATE = 5,
} SkStatus;

// A square label-by-label contingency table, opaque to C.
typedef struct SkConfusionMatrix SkConfusionMatrix;

// A loaded response corpus, opaque to C.
typedef struct SkCorpus SkCorpus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on the calling thread, or an
// empty string if none. The pointer stays valid until the next failing
// scorekit call on this thread.
const char *sk_last_error_message(void);

// Library version as a static string.
const char *sk_version(void);

// Load a corpus from a JSON-lines response file, and optionally attach
// scores from a CSV file (`scores_path` may be NULL).
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be a valid pointer.
SkStatus sk_corpus_load(const char *responses_path, const char *scores_path, SkCorpus **out);

// Release a corpus handle. NULL is ignored.
//
// # Safety
// `corpus` must come from `sk_corpus_load` and not be freed twice.
void sk_corpus_free(SkCorpus *corpus);

// Number of responses in the corpus.
//
// # Safety
// `corpus` must be a live handle; `out` must be valid.
SkStatus sk_corpus_response_count(const SkCorpus *corpus, size_t *out);

// Number of score records in the corpus.
//
// # Safety
// `corpus` must be a live handle; `out` must be valid.
SkStatus sk_corpus_score_count(const SkCorpus *corpus, size_t *out);

// Build a k-by-k confusion matrix from two aligned label sequences.
// Labels must lie in `0..k`.
//
// # Safety
// `labels_a` and `labels_b` must point to `n` readable bytes each; `out`
// must be valid.
SkStatus sk_confusion_matrix_from_labels(const uint8_t *labels_a,
                                         const uint8_t *labels_b,
                                         size_t n,
                                         size_t k,
                                         SkConfusionMatrix **out);

// Release a confusion-matrix handle. NULL is ignored.
//
// # Safety
// `matrix` must come from `sk_confusion_matrix_from_labels` and not be
// freed twice.
void sk_confusion_matrix_free(SkConfusionMatrix *matrix);

// Cohen's kappa for the matrix.
//
// # Safety
// `matrix` must be a live handle; `out` must be valid.
SkStatus sk_cohen_kappa(const SkConfusionMatrix *matrix, double *out);

// Quadratic weighted kappa for the matrix.
//
// # Safety
// `matrix` must be a live handle; `out` must be valid.
SkStatus sk_quadratic_weighted_kappa(const SkConfusionMatrix *matrix, double *out);

// Fleiss' kappa over a row-major `n_items x k` table of per-item label
// counts. Every row must sum to the same number of raters (>= 2).
//
// # Safety
// `counts` must point to `n_items * k` readable u64 values; `out` must be
// valid.
SkStatus sk_fleiss_kappa(const uint64_t *counts, size_t n_items, size_t k, double *out);

// Qualitative band for a kappa value, as a static string
// ("worse-than-chance", "slight", "fair", "moderate", "substantial",
// "almost-perfect").
const char *sk_interpret_kappa(double value);

// Rand consistency between two clusterings of the same `n` items, given as
// aligned cluster-id arrays. 1.0 means every item pair is grouped the same
// way in both.
//
// # Safety
// `clusters_a` and `clusters_b` must point to `n` readable u32 values;
// `out` must be valid.
SkStatus sk_rand_consistency(const uint32_t *clusters_a,
                             const uint32_t *clusters_b,
                             size_t n,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCOREKIT_H */
