#ifndef KGFUSE_H
#define KGFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Predicted class, benign on ties.
typedef enum KgfLabel {
  KGF_LABEL_BENIGN = 0,
  KGF_LABEL_HARMFUL = 1,
} KgfLabel;

// Result of every fallible call.
typedef enum KgfStatus {
  KGF_STATUS_OK = 0,
  // A required pointer argument was null.
  KGF_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  KGF_STATUS_INVALID_UTF8 = 2,
  KGF_STATUS_IO = 3,
  // Malformed model, graph or corpus content.
  KGF_STATUS_PARSE = 4,
  // Well-formed input that violates a model or graph invariant.
  KGF_STATUS_VALIDATION = 5,
  KGF_STATUS_CONFIG = 6,
  KGF_STATUS_NUMERIC = 7,
  KGF_STATUS_GENERATION = 8,
  // An internal panic was caught at the boundary.
  KGF_STATUS_PANIC = 9,
} KgfStatus;

// A loaded model together with the knowledge graph used for entity linking.
typedef struct KgfDetector KgfDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *kgf_version(void);

// Message for the most recent failure on this thread, or null after a
// successful call. Valid until the next kgf_* call on the same thread.
const char *kgf_last_error(void);

// Loads a model file and a knowledge-graph file.
//
// # Safety
// Both paths must be null or nul-terminated strings; `out` must be null or
// point to writable storage for one pointer.
enum KgfStatus kgf_detector_load(const char *model_path,
                                 const char *kg_path,
                                 struct KgfDetector **out);

// Builds a detector from in-memory model and knowledge-graph JSON.
//
// # Safety
// As for [`kgf_detector_load`].
enum KgfStatus kgf_detector_from_json(const char *model_json,
                                      const char *kg_json,
                                      struct KgfDetector **out);

// Releases a detector. Null is accepted and ignored.
//
// # Safety
// `detector` must be null or a handle returned by this library that has not
// been freed.
void kgf_detector_free(struct KgfDetector *detector);

// Scores one text. Either output pointer may be null when not needed.
//
// # Safety
// `detector` must be a live handle; `text` a nul-terminated string; outputs
// null or writable.
enum KgfStatus kgf_detector_predict(const struct KgfDetector *detector,
                                    const char *text,
                                    double *out_p_harmful,
                                    enum KgfLabel *out_label);

// Embedding width of the loaded model.
//
// # Safety
// `detector` must be a live handle; `out_dim` writable.
enum KgfStatus kgf_detector_dim(const struct KgfDetector *detector, size_t *out_dim);

// Runs the built-in finite-difference gradient check and reports the
// largest relative error. A large error is reported through the output,
// not the status.
//
// # Safety
// `out_max_error` must be writable.
enum KgfStatus kgf_gradcheck(uint64_t seed, double *out_max_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGFUSE_H */
