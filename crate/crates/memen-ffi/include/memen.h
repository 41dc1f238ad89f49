/* C interface for the MEMEN reader. Generated; do not edit. */

#ifndef MEMEN_FFI_H
#define MEMEN_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MemenStatus {
  MemenOk = 0,
  /**
   * A required pointer argument was null.
   */
  MemenErrNullArgument = 1,
  /**
   * A string argument was not valid UTF-8 or not valid JSON.
   */
  MemenErrParse = 2,
  /**
   * The checkpoint could not be read.
   */
  MemenErrIo = 3,
  /**
   * Any other failure inside the library.
   */
  MemenErrRuntime = 4,
} MemenStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct MemenModel MemenModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer is
 * owned by the library and valid until the next failing call on the same
 * thread; do not free it.
 */
const char *memen_last_error_message(void);

/**
 * Load a model checkpoint from `path` into `*out`. On success the caller
 * owns the handle and must release it with `memen_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MemenStatus memen_model_load(const char *path, struct MemenModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be a handle from `memen_model_load`, not yet freed.
 */
void memen_model_free(struct MemenModel *model);

/**
 * Predict the answer span for one example. `example_json` is a dataset
 * record: `{"id", "passage", "question", "answer_start", "answer_end",
 * "answer_text"}` with passage/question as `[word, pos, ner]` token triples.
 * On success `*out_json` receives a NUL-terminated JSON object `{"id",
 * "answer_text", "start", "end", "confidence"}`; free it with
 * `memen_string_free`.
 *
 * # Safety
 * `model` must be a live handle; `example_json` a NUL-terminated string;
 * `out_json` a valid pointer.
 */
enum MemenStatus memen_predict_json(const struct MemenModel *model,
                                    const char *example_json,
                                    char **out_json);

/**
 * Free a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void memen_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMEN_FFI_H */
