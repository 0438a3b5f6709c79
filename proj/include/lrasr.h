/* C interface to the lrasr speech recognition toolkit.
 *
 * Every call returns an lrasr_status. On failure the message for the calling
 * thread is available from lrasr_last_error() until the next failing call.
 * Handles are opaque and owned by the caller; release them with the matching
 * *_free function. Strings returned through char** are freed with
 * lrasr_string_free. */
#ifndef LRASR_H_
#define LRASR_H_

#include <stddef.h>
#include <stdint.h>

#if defined(LRASR_BUILDING)
#define LRASR_API __attribute__((visibility("default")))
#else
#define LRASR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  LRASR_OK = 0,
  LRASR_ERR_USAGE = 1,
  LRASR_ERR_DATA = 2,
  LRASR_ERR_DIVERGENCE = 3,
  LRASR_ERR_INTERNAL = 4
} lrasr_status;

typedef enum { LRASR_PASS_FIRST = 1, LRASR_PASS_SECOND = 2 } lrasr_pass;

typedef struct lrasr_bpe lrasr_bpe;
typedef struct lrasr_model lrasr_model;

typedef void (*lrasr_progress_fn)(const char* message, void* user);

LRASR_API const char* lrasr_last_error(void);
LRASR_API const char* lrasr_version(void);
LRASR_API void lrasr_string_free(char* s);

/* --- tokenizer --- */
/* Trains on the transcripts of the given manifests. */
LRASR_API lrasr_status lrasr_bpe_train(const char* const* manifests, int num_manifests,
                                       int vocab_size, lrasr_bpe** out);
LRASR_API lrasr_status lrasr_bpe_load(const char* path, lrasr_bpe** out);
LRASR_API lrasr_status lrasr_bpe_save(const lrasr_bpe* bpe, const char* path);
LRASR_API int lrasr_bpe_vocab_size(const lrasr_bpe* bpe);
/* Writes up to cap ids; *count receives the full length. */
LRASR_API lrasr_status lrasr_bpe_encode(const lrasr_bpe* bpe, const char* text, int* ids,
                                        int cap, int* count);
LRASR_API lrasr_status lrasr_bpe_decode(const lrasr_bpe* bpe, const int* ids, int count,
                                        char** text);
LRASR_API void lrasr_bpe_free(lrasr_bpe* bpe);

/* --- model --- */
/* config_json: model configuration object, NULL or "" for defaults. */
LRASR_API lrasr_status lrasr_model_create(const char* config_json, uint64_t seed,
                                          lrasr_model** out);
LRASR_API lrasr_status lrasr_model_load(const char* path, lrasr_model** out);
LRASR_API lrasr_status lrasr_model_save(const lrasr_model* model, const char* path);
LRASR_API lrasr_status lrasr_model_config(const lrasr_model* model, char** config_json);
LRASR_API void lrasr_model_free(lrasr_model* model);

/* Trains in place. options_json keys: sources (array of {manifest, weight}),
 * dev (manifest), frozen (group names), seed, threads, loss_log and any
 * training setting (epochs, lr, batch_size, patience, ...). *summary_json
 * (optional) receives the per-epoch curve. */
LRASR_API lrasr_status lrasr_model_train(lrasr_model* model, const lrasr_bpe* bpe,
                                         const char* options_json, char** summary_json);

/* Decodes every utterance of a manifest and writes n-best records
 * (utt_id, rank, log_score, text) to out_path. */
LRASR_API lrasr_status lrasr_decode_manifest(const lrasr_model* model, const lrasr_bpe* bpe,
                                             const char* manifest, lrasr_pass pass,
                                             int beam_size, int nbest, int threads,
                                             const char* out_path);

/* --- pseudo-label filtering --- */
/* threshold: a number or "all". Reads rank-1 records of nbest_path. */
LRASR_API lrasr_status lrasr_ssl_filter(const char* nbest_path, const char* threshold,
                                        const char* out_path, int* kept, int* pool);
LRASR_API lrasr_status lrasr_oracle_filter(const char* nbest_path, const char* sealed_path,
                                           const char* out_path, int* kept, int* pool);

/* --- evaluation --- */
typedef struct {
  int64_t substitutions;
  int64_t deletions;
  int64_t insertions;
  int64_t reference_words;
  double wer_percent;
} lrasr_wer_report;

/* References from a manifest's transcripts (or a sealed oracle file),
 * hypotheses from rank-1 records of an n-best file. */
LRASR_API lrasr_status lrasr_wer(const char* reference_path, const char* nbest_path,
                                 lrasr_wer_report* out);
LRASR_API lrasr_status lrasr_wer_strings(const char* reference, const char* hypothesis,
                                         lrasr_wer_report* out);
LRASR_API double lrasr_relative_improvement(double base, double arm);

/* --- corpus, experiments, reports --- */
/* config_json: optional {"corpus": {...}, "language": {...}}. */
LRASR_API lrasr_status lrasr_corpus_generate(uint64_t seed, const char* config_json,
                                             const char* out_dir, int threads);

/* Runs an experiment plan. seed < 0 and threads <= 0 keep the plan values. */
LRASR_API lrasr_status lrasr_pipeline_run(const char* plan_path, const char* stage,
                                          const char* out_dir, int64_t seed, int threads,
                                          lrasr_progress_fn progress, void* user);

/* Re-renders report.tsv / report.md from a results.json file. */
LRASR_API lrasr_status lrasr_report(const char* results_path, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* LRASR_H_ */
