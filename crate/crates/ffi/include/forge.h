#ifndef FORGE_H
#define FORGE_H

/* Generated by cbindgen from forge-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code for every FFI call.
typedef enum ForgeStatus {
  FORGE_STATUS_OK = 0,
  // A required pointer argument was NULL.
  FORGE_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  FORGE_STATUS_INVALID_UTF8 = 2,
  // Input text is not well-formed JSON.
  FORGE_STATUS_DECODE_ERROR = 3,
  // Well-formed JSON that violates the target schema.
  FORGE_STATUS_SCHEMA_ERROR = 4,
  // File could not be read or parsed.
  FORGE_STATUS_IO_ERROR = 5,
  // Lookup key absent (unknown qid, metric not defined for the input).
  FORGE_STATUS_NOT_FOUND = 6,
  // Unexpected internal failure.
  FORGE_STATUS_INTERNAL_ERROR = 7,
} ForgeStatus;

// Evaluation subtask selector for [`forge_score_pair`].
typedef enum ForgeTask {
  FORGE_TASK_MENTION_DETECTION = 0,
  FORGE_TASK_ENTITY_LINKING = 1,
  FORGE_TASK_ENTITY_TYPING = 2,
  FORGE_TASK_OPEN_RELATION_EXTRACTION = 3,
  FORGE_TASK_DESCRIPTION_GENERATION = 4,
  FORGE_TASK_ALIAS_GENERATION = 5,
} ForgeTask;

// Opaque ontology handle.
typedef struct ForgeOntology ForgeOntology;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *forge_version(void);

// Release a string allocated by this library.
//
// # Safety
// `s` must be NULL or a pointer previously returned by a forge function
// that allocates a string, and must not be used afterwards.
void forge_string_free(char *s);

// ROUGE-L F1 between two texts after metric tokenization.
//
// # Safety
// `candidate` and `reference` must be valid NUL-terminated strings;
// `out_f1` must be a valid pointer.
enum ForgeStatus forge_rouge_l_f1(const char *candidate, const char *reference, double *out_f1);

// Validate model output text against the target schema.
//
// Returns `Ok`, `DecodeError` or `SchemaError`; when a buffer is given the
// error message (with position or path) is copied into it.
//
// # Safety
// `text` must be a valid NUL-terminated string; `error_buf` must be NULL
// or point to at least `error_cap` writable bytes.
enum ForgeStatus forge_validate_output(const char *text,
                                       bool strict,
                                       char *error_buf,
                                       size_t error_cap);

// Open an ontology snapshot file (as written by `forge ingest-wikidata`).
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` must be a valid
// pointer. A non-NULL handle must be released with [`forge_ontology_free`].
enum ForgeStatus forge_ontology_open(const char *path, struct ForgeOntology **out);

// Release an ontology handle.
//
// # Safety
// `ontology` must be NULL or a handle from [`forge_ontology_open`] not yet
// freed.
void forge_ontology_free(struct ForgeOntology *ontology);

// Number of entities in the snapshot.
//
// # Safety
// `ontology` must be a live handle; `out` must be a valid pointer.
enum ForgeStatus forge_ontology_entity_count(const struct ForgeOntology *ontology, size_t *out);

// Whether the snapshot contains the entity (seen/unseen boundary check).
//
// # Safety
// `ontology` must be a live handle; `qid` a valid string; `out` valid.
enum ForgeStatus forge_ontology_contains(const struct ForgeOntology *ontology,
                                         const char *qid,
                                         bool *out);

// Canonical title of an entity (label, falling back to the linked page
// title). The returned string must be freed with [`forge_string_free`].
//
// # Safety
// `ontology` must be a live handle; `qid` a valid string; `out_title`
// a valid pointer.
enum ForgeStatus forge_ontology_title(const struct ForgeOntology *ontology,
                                      const char *qid,
                                      char **out_title);

// Score one prediction against one gold target, both as target-schema JSON
// text. `threshold` is the title threshold for entity linking and the
// match threshold for open relation extraction; other tasks ignore it.
//
// The gold text must validate strictly. An invalid prediction scores zero
// on every task, mirroring the harness. For description generation the
// mean ROUGE-L lands in all three outputs, and `NotFound` is returned when
// the gold carries no descriptions (metric absent).
//
// # Safety
// `gold_json` and `pred_json` must be valid NUL-terminated strings; the
// out pointers must be valid.
enum ForgeStatus forge_score_pair(const char *gold_json,
                                  const char *pred_json,
                                  enum ForgeTask task,
                                  double threshold,
                                  double *out_precision,
                                  double *out_recall,
                                  double *out_f1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FORGE_H */
