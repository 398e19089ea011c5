#ifndef RISKDAG_H
#define RISKDAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum rd_status {
  RD_STATUS_OK = 0,
  RD_STATUS_NULL_ARGUMENT = 1,
  RD_STATUS_INVALID_UTF8 = 2,
  RD_STATUS_PARSE = 3,
  RD_STATUS_UNKNOWN_NODE = 4,
  RD_STATUS_UNKNOWN_STATE = 5,
  RD_STATUS_CONTRADICTION = 6,
  RD_STATUS_NOT_READY = 7,
  RD_STATUS_INVALID = 8,
  RD_STATUS_BUFFER_TOO_SMALL = 9,
  RD_STATUS_IO = 10,
  RD_STATUS_PANIC = 11,
} rd_status;

/**
 * Opaque model handle: a document plus the current observations.
 */
typedef struct rd_model rd_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rd_last_error_message(void);

/**
 * Parses a model document.
 *
 * # Safety
 * `xml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum rd_status rd_model_from_xml(const char *xml, struct rd_model **out_model);

/**
 * Reads and parses a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum rd_status rd_model_open(const char *path, struct rd_model **out_model);

/**
 * The bundled instant-payments model.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum rd_status rd_model_case_study(struct rd_model **out_model);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from an `rd_model_*` constructor and not be used
 * afterwards.
 */
void rd_model_free(struct rd_model *model);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void rd_string_free(char *s);

/**
 * Serializes the model document.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum rd_status rd_model_to_xml(const struct rd_model *model, char **out_xml);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum rd_status rd_model_node_count(const struct rd_model *model, size_t *out_count);

/**
 * # Safety
 * `model` must be a live handle, `node` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum rd_status rd_model_state_count(const struct rd_model *model,
                                    const char *node,
                                    size_t *out_count);

/**
 * Structural and CPT findings as JSON.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum rd_status rd_validate_json(const struct rd_model *model, char **out_json);

/**
 * Observes `node = state` (state by label). Rejected observations leave
 * the evidence unchanged.
 *
 * # Safety
 * `model` must be a live handle; strings NUL-terminated.
 */
enum rd_status rd_evidence_set(struct rd_model *model, const char *node, const char *state);

/**
 * Removes the observation on `node`, or all observations when `node` is
 * NULL.
 *
 * # Safety
 * `model` must be a live handle; `node` NULL or NUL-terminated.
 */
enum rd_status rd_evidence_clear(struct rd_model *model, const char *node);

/**
 * Writes the posterior of `node` into `out[0..len)`. `written` receives
 * the state count; with a short buffer nothing is written and
 * `RD_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `model` must be a live handle, `node` NUL-terminated, `out` valid for
 * `len` doubles and `written` a valid pointer.
 */
enum rd_status rd_posterior(const struct rd_model *model,
                            const char *node,
                            double *out_probs,
                            size_t len,
                            size_t *written);

/**
 * All posterior marginals under the current evidence as a JSON object
 * `{node: [p...]}`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum rd_status rd_posterior_json(const struct rd_model *model, char **out_json);

/**
 * `P(target = target_state | do(node = state), evidence)`.
 *
 * # Safety
 * `model` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum rd_status rd_do_query(const struct rd_model *model,
                           const char *node,
                           const char *state,
                           const char *target,
                           const char *target_state,
                           double *out_prob);

/**
 * d-separation of comma-separated node sets; `out` receives 1 or 0.
 *
 * # Safety
 * `model` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum rd_status rd_d_separated(const struct rd_model *model,
                              const char *x,
                              const char *y,
                              const char *z,
                              int *out_flag);

/**
 * Intervention ranking over activation nodes as JSON.
 *
 * # Safety
 * `model` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum rd_status rd_rank_json(const struct rd_model *model,
                            const char *target,
                            const char *state,
                            char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISKDAG_H */
