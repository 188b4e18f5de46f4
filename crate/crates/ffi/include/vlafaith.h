#ifndef VLAFAITH_H
#define VLAFAITH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  VF_STATUS_OK = 0,
  VF_STATUS_NULL_ARGUMENT = 1,
  VF_STATUS_INVALID_UTF8 = 2,
  VF_STATUS_INVALID_ARGUMENT = 3,
  VF_STATUS_IO = 4,
  VF_STATUS_DATA = 5,
  VF_STATUS_INFEASIBLE = 6,
  /**
   * The requested report section was skipped for this corpus.
   */
  VF_STATUS_UNAVAILABLE = 7,
  VF_STATUS_PANIC = 8,
} VfStatus;

/**
 * A loaded or generated corpus.
 */
typedef struct VfCorpus VfCorpus;

/**
 * Evaluation settings plus the lexicon and relevance rules they name.
 */
typedef struct VfEvaluator VfEvaluator;

/**
 * The result of evaluating one corpus.
 */
typedef struct VfReport VfReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Do not free.
 */
const char *vf_version(void);

/**
 * Message for the last failed call on this thread, or null if it succeeded.
 * The pointer stays valid until the next library call on the same thread.
 */
const char *vf_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed. Null is ignored.
 */
void vf_string_free(char *s);

/**
 * Loads `records.jsonl`, `obstacles.jsonl` and `futures.jsonl` from `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
VfStatus vf_corpus_load(const char *dir, bool strict, VfCorpus **out);

/**
 * Generates a planted corpus. `spec_json` may be null for the default spec.
 * With a non-null `out_dir` the corpus and its ground-truth ledger are also
 * written there.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
VfStatus vf_corpus_synth(const char *spec_json, const char *out_dir, VfCorpus **out);

/**
 * # Safety
 * `corpus` must be a live handle; `records` and `pairs` must be writable.
 */
VfStatus vf_corpus_counts(const VfCorpus *corpus, size_t *records, size_t *pairs);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void vf_corpus_free(VfCorpus *corpus);

/**
 * Builds an evaluator from a TOML configuration; null means defaults.
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` must be writable.
 */
VfStatus vf_evaluator_new(const char *config_toml, VfEvaluator **out);

/**
 * # Safety
 * `evaluator` must be null or a handle not yet freed.
 */
void vf_evaluator_free(VfEvaluator *evaluator);

/**
 * Runs every phase over `corpus`.
 *
 * # Safety
 * Both handles must be live; `out` must be writable.
 */
VfStatus vf_evaluate(const VfEvaluator *evaluator, const VfCorpus *corpus, VfReport **out);

/**
 * The full report as pretty JSON. Free the string with [`vf_string_free`].
 *
 * # Safety
 * `report` must be live; `out` must be writable.
 */
VfStatus vf_report_json(const VfReport *report, char **out);

/**
 * The report as plain-text tables plus footer. Free with [`vf_string_free`].
 *
 * # Safety
 * `report` must be live; `out` must be writable.
 */
VfStatus vf_report_text(const VfReport *report, char **out);

/**
 * Mean overall fidelity; [`VfStatus::Unavailable`] when no record has
 * obstacle context.
 *
 * # Safety
 * `report` must be live; `out` must be writable.
 */
VfStatus vf_report_overall_fidelity(const VfReport *report, double *out);

/**
 * Number of pairs of each outcome, in the order faithful, silent failure,
 * reason-only shift, robust.
 *
 * # Safety
 * `report` must be live; `counts` must point to four writable values.
 */
VfStatus vf_report_outcome_counts(const VfReport *report, size_t *counts);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void vf_report_free(VfReport *report);

/**
 * Two-sided p-value of a Pearson correlation `r` over `n` points.
 *
 * # Safety
 * `p_value` must be writable.
 */
VfStatus vf_pearson_p_value(double r, size_t n, double *p_value);

/**
 * k-nearest-neighbour mutual information estimate in nats, clamped at zero.
 *
 * # Safety
 * `x` and `y` must each point to `n` readable values; `nats` must be writable.
 */
VfStatus vf_ksg_mi(const double *x,
                   const double *y,
                   size_t n,
                   size_t k,
                   uint64_t seed,
                   double *nats);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VLAFAITH_H */
