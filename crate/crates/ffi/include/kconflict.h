#ifndef KCONFLICT_H
#define KCONFLICT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every exported function.
 */
typedef enum KcStatus {
  KC_STATUS_OK = 0,
  KC_STATUS_NULL_ARGUMENT = 1,
  KC_STATUS_INVALID_UTF8 = 2,
  KC_STATUS_IO = 3,
  /*
   Malformed JSON or an input the core rejected.
   */
  KC_STATUS_INVALID_INPUT = 4,
  KC_STATUS_NOT_FOUND = 5,
  /*
   A panic was caught at the boundary.
   */
  KC_STATUS_INTERNAL = 6,
} KcStatus;

/*
 Opaque handle to a loaded, filtered graph.
 */
typedef struct KcGraph KcGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Load a graph from triplet, entity and relation TSV files and apply the
 filter given as JSON (null for the default filter). The handle is
 written to `out` and must be released with [`kc_graph_free`].

 # Safety
 String arguments are null or NUL-terminated; `out` is writable.
 */
enum KcStatus kc_graph_load(const char *triplets_path,
                            const char *entities_path,
                            const char *relations_path,
                            const char *filter_json,
                            struct KcGraph **out);

/*
 Release a graph handle. Null is ignored.

 # Safety
 `g` is null or a handle from [`kc_graph_load`] not yet freed.
 */
void kc_graph_free(struct KcGraph *g);

/*
 # Safety
 `g` is a live handle; the output pointers are writable.
 */
enum KcStatus kc_graph_counts(const struct KcGraph *g, size_t *entities, size_t *triplets);

/*
 Number of triplets touching `entity_id`; `KC_STATUS_NOT_FOUND` when the
 entity is not in the graph.

 # Safety
 `g` is a live handle; `entity_id` is NUL-terminated; `out` is writable.
 */
enum KcStatus kc_graph_degree(const struct KcGraph *g, const char *entity_id, size_t *out);

/*
 Sample a seed and extract one subgraph, as the core does for task
 `index` of a run seeded with `seed`. `config_json` holds extraction
 settings (null for defaults). The subgraph is written to `out` as JSON.

 # Safety
 `g` is a live handle; `config_json` is null or NUL-terminated; `out` is
 writable.
 */
enum KcStatus kc_extract_subgraph_json(const struct KcGraph *g,
                                       uint64_t seed,
                                       uint64_t index,
                                       const char *config_json,
                                       char **out);

/*
 Parse a model's reply to a detection prompt. `strategy` is 0 for the
 binary prompt and 1 for the multi-step prompt.

 # Safety
 `raw` is NUL-terminated; `out` is writable.
 */
enum KcStatus kc_parse_detection_response_json(const char *raw, uint32_t strategy, char **out);

/*
 Score one instance from three parsed runs (a JSON array as produced by
 [`kc_parse_detection_response_json`]) and optional gold sentence pairs.
 `aggregation` is `all_runs`, `majority` or `any_run`; null means
 `all_runs`.

 # Safety
 String arguments are null or NUL-terminated; `out` is writable.
 */
enum KcStatus kc_score_instance_json(const char *runs_json,
                                     const char *gold_json,
                                     double threshold,
                                     const char *aggregation,
                                     char **out);

/*
 Release a string returned by this library. Null is ignored.

 # Safety
 `s` is null or a string from this library not yet freed.
 */
void kc_string_free(char *s);

/*
 Description of the last failure on this thread, or null. Valid until the
 next call into the library from the same thread.
 */
const char *kc_last_error_message(void);

/*
 Library version, static.
 */
const char *kc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KCONFLICT_H */
