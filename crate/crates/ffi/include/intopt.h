#ifndef INTOPT_H
#define INTOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IntoptOutcome {
  INTOPT_OUTCOME_LOSS = -1,
  INTOPT_OUTCOME_TIE = 0,
  INTOPT_OUTCOME_WIN = 1,
} IntoptOutcome;

typedef enum IntoptPromptKind {
  INTOPT_PROMPT_KIND_FORMULATION = 0,
  INTOPT_PROMPT_KIND_REFINEMENT = 1,
  INTOPT_PROMPT_KIND_REALIZATION = 2,
  INTOPT_PROMPT_KIND_BASELINE = 3,
  INTOPT_PROMPT_KIND_DISTILLATION = 4,
  INTOPT_PROMPT_KIND_HARNESS = 5,
} IntoptPromptKind;

/**
 * Result of every fallible call.
 */
typedef enum IntoptStatus {
  INTOPT_STATUS_OK = 0,
  INTOPT_STATUS_NULL_ARGUMENT = 1,
  INTOPT_STATUS_INVALID_UTF8 = 2,
  INTOPT_STATUS_IO = 3,
  INTOPT_STATUS_PARSE = 4,
  INTOPT_STATUS_INVALID_ARGUMENT = 5,
  INTOPT_STATUS_PANIC = 6,
} IntoptStatus;

/**
 * Ranked retrieval result. Pass ids are kept as C strings so the pointers
 * handed out stay valid for the lifetime of the handle.
 */
typedef struct IntoptHits IntoptHits;

/**
 * TF-IDF index over a knowledge base.
 */
typedef struct IntoptIndex IntoptIndex;

/**
 * Loaded knowledge base.
 */
typedef struct IntoptKb IntoptKb;

/**
 * One `{name}` -> value substitution for [`intopt_render_prompt`].
 */
typedef struct IntoptSlot {
  const char *name;
  const char *value;
} IntoptSlot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next intopt call on the same thread.
 */
const char *intopt_last_error(void);

/**
 * Library version, static storage.
 */
const char *intopt_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed yet (NULL is ignored).
 */
void intopt_string_free(char *s);

/**
 * Loads a kb.json file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IntoptStatus intopt_kb_load(const char *path, struct IntoptKb **out);

/**
 * Number of passes (0 for NULL).
 *
 * # Safety
 * `kb` must be NULL or a live handle from [`intopt_kb_load`].
 */
size_t intopt_kb_len(const struct IntoptKb *kb);

/**
 * # Safety
 * `kb` must be NULL or a live handle from [`intopt_kb_load`].
 */
void intopt_kb_free(struct IntoptKb *kb);

/**
 * Builds the retrieval index. The index does not borrow `kb`.
 *
 * # Safety
 * `kb` must be a live handle; `out` must be writable.
 */
enum IntoptStatus intopt_index_build(const struct IntoptKb *kb, struct IntoptIndex **out);

/**
 * # Safety
 * `index` must be NULL or a live handle from [`intopt_index_build`].
 */
void intopt_index_free(struct IntoptIndex *index);

/**
 * Top-`m` passes for `query`. An empty result (no shared vocabulary) is
 * not an error.
 *
 * # Safety
 * `index` must be a live handle, `query` NUL-terminated, `out` writable.
 */
enum IntoptStatus intopt_retrieve(const struct IntoptIndex *index,
                                  const char *query,
                                  size_t m,
                                  struct IntoptHits **out);

/**
 * # Safety
 * `hits` must be NULL or a live handle.
 */
size_t intopt_hits_len(const struct IntoptHits *hits);

/**
 * Pass id of hit `i` (rank `i + 1`), or NULL when out of range. Owned by
 * the handle.
 *
 * # Safety
 * `hits` must be NULL or a live handle.
 */
const char *intopt_hits_pass_id(const struct IntoptHits *hits, size_t i);

/**
 * Score of hit `i`, or -1 when out of range.
 *
 * # Safety
 * `hits` must be NULL or a live handle.
 */
double intopt_hits_score(const struct IntoptHits *hits, size_t i);

/**
 * # Safety
 * `hits` must be NULL or a live handle from [`intopt_retrieve`].
 */
void intopt_hits_free(struct IntoptHits *hits);

/**
 * Renders a built-in stage template. Every slot the template uses must be
 * present in `slots` (`n_slots` entries); extra slots are ignored.
 *
 * # Safety
 * `slots` must point to `n_slots` valid entries (may be NULL when
 * `n_slots == 0`); `out` must be writable.
 */
enum IntoptStatus intopt_render_prompt(enum IntoptPromptKind kind,
                                       const struct IntoptSlot *slots,
                                       size_t n_slots,
                                       char **out);

/**
 * Baseline time over optimized time; 0 for incorrect programs or a
 * non-positive optimized time.
 */
double intopt_speedup(double avg_ns_base, double avg_ns_opt, bool correct);

/**
 * Win/tie/loss of `ratio` against the inclusive band `[lo, hi]`.
 */
enum IntoptOutcome intopt_classify_ratio(double ratio, double lo, double hi);

/**
 * Markdown summary table for a results.jsonl file.
 *
 * # Safety
 * `results_path` and `label` must be NUL-terminated; `out` writable.
 */
enum IntoptStatus intopt_report_markdown(const char *results_path, const char *label, char **out);

/**
 * Report summary as JSON (counts, rates, average speedup, buckets).
 *
 * # Safety
 * `results_path` must be NUL-terminated; `out` writable.
 */
enum IntoptStatus intopt_report_json(const char *results_path, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INTOPT_H */
