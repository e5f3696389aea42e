#ifndef KWSEQ_H
#define KWSEQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KwsStatus {
  KWS_STATUS_OK = 0,
  KWS_STATUS_NULL_POINTER = 1,
  KWS_STATUS_INVALID_ARGUMENT = 2,
  KWS_STATUS_CONFIG = 3,
  KWS_STATUS_IO = 4,
  KWS_STATUS_FORMAT = 5,
  KWS_STATUS_DIMENSION = 6,
  KWS_STATUS_NO_PATH = 7,
  KWS_STATUS_BUFFER_TOO_SMALL = 8,
  KWS_STATUS_PANIC = 9,
  KWS_STATUS_OTHER = 10,
} KwsStatus;

// A trained frame classifier.
typedef struct KwsModel KwsModel;

// A model bound to a corpus's keywords with one prepared post-processing mode.
typedef struct KwsSpotter KwsSpotter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *kws_last_error(void);

const char *kws_version(void);

// Loads a model file written by `kwseq train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum KwsStatus kws_model_load(const char *path, struct KwsModel **out);

// # Safety
// `model` must come from [`kws_model_load`] and not be used afterwards.
void kws_model_free(struct KwsModel *model);

// Feature dimension expected per frame, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t kws_model_input_dim(const struct KwsModel *model);

// Number of output classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t kws_model_num_units(const struct KwsModel *model);

// Output frames produced for `frames` input frames.
//
// # Safety
// `model` must be null or a live handle.
size_t kws_model_output_frames(const struct KwsModel *model, size_t frames);

// Log-posteriors of a row-major `frames x dim` feature matrix, written
// row-major to `out` (`out_len` must hold output frames times units).
//
// # Safety
// Pointers must be valid for the given lengths.
enum KwsStatus kws_model_forward(const struct KwsModel *model,
                                 const double *features,
                                 size_t frames,
                                 size_t dim,
                                 double *out,
                                 size_t out_len);

// Prepares keyword scoring for a model and the corpus in `data_dir`.
//
// `mode` is `smooth`, `kwfiller` or `med`. `config_json` may be null for
// defaults, otherwise an experiment configuration.
//
// # Safety
// String arguments must be NUL-terminated (or null where allowed) and `out`
// a valid pointer.
enum KwsStatus kws_spotter_new(const char *data_dir,
                               const char *model_path,
                               const char *mode,
                               const char *config_json,
                               struct KwsSpotter **out);

// # Safety
// `spotter` must come from [`kws_spotter_new`] and not be used afterwards.
void kws_spotter_free(struct KwsSpotter *spotter);

// # Safety
// `spotter` must be null or a live handle.
size_t kws_spotter_num_keywords(const struct KwsSpotter *spotter);

// Name of keyword `index`, owned by the spotter; null if out of range.
//
// # Safety
// `spotter` must be null or a live handle.
const char *kws_spotter_keyword(const struct KwsSpotter *spotter, size_t index);

// One detection score per keyword for a row-major `frames x dim` feature
// matrix. Larger is more confident; 0 is the estimated decision threshold.
//
// # Safety
// Pointers must be valid for the given lengths.
enum KwsStatus kws_spotter_score(const struct KwsSpotter *spotter,
                                 const double *features,
                                 size_t frames,
                                 size_t dim,
                                 double *scores,
                                 size_t num_scores);

// Equal error rate of positive and negative trial scores, with the
// threshold at which it is reached.
//
// # Safety
// Score pointers must be valid for their lengths; outputs must be valid.
enum KwsStatus kws_eer(const double *positives,
                       size_t num_positives,
                       const double *negatives,
                       size_t num_negatives,
                       double *eer,
                       double *threshold);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KWSEQ_H */
