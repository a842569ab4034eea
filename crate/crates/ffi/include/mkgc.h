#ifndef MKGC_H
#define MKGC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MkgcStatus {
  MKGC_STATUS_OK = 0,
  MKGC_STATUS_INVALID_ARGUMENT = 1,
  MKGC_STATUS_NOT_FOUND = 2,
  MKGC_STATUS_CONFIG = 3,
  MKGC_STATUS_PARSE = 4,
  MKGC_STATUS_CONTRACT_VIOLATION = 5,
  MKGC_STATUS_USAGE = 6,
  MKGC_STATUS_NON_FINITE = 7,
  MKGC_STATUS_IO = 8,
  MKGC_STATUS_JSON = 9,
  MKGC_STATUS_NULL_POINTER = 10,
  MKGC_STATUS_BUFFER_TOO_SMALL = 11,
  MKGC_STATUS_PANIC = 12,
} MkgcStatus;

/**
 * A knowledge graph.
 */
typedef struct MkgcStore MkgcStore;

/**
 * Trained TransE embeddings together with the filter index of their store.
 */
typedef struct MkgcTransE MkgcTransE;

/**
 * Picks one id out of `remaining[0..n]` into `*pick`. A nonzero return
 * aborts the rerank.
 */
typedef int (*MkgcScorer)(void *user,
                          uint64_t head,
                          uint64_t relation,
                          const uint64_t *remaining,
                          size_t n,
                          uint64_t *pick);

typedef struct MkgcMetrics {
  double h1;
  double h3;
  double h10;
  double mrr;
} MkgcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library; valid until the next failing call on this thread.
 */
const char *mkgc_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *mkgc_version(void);

/**
 * Generates a synthetic KG. `languages` is a comma-separated list of codes.
 *
 * # Safety
 * `languages` must be a nul-terminated string and `out` a valid pointer.
 */
enum MkgcStatus mkgc_store_synth(size_t n_entities,
                                 size_t n_relations,
                                 const char *languages,
                                 double shared_fraction,
                                 uint64_t seed,
                                 struct MkgcStore **out);

/**
 * Loads TSV triples and JSONL labels.
 *
 * # Safety
 * String arguments must be nul-terminated and `out` a valid pointer.
 */
enum MkgcStatus mkgc_store_ingest(const char *triples_path,
                                  const char *labels_path,
                                  const char *languages,
                                  struct MkgcStore **out);

/**
 * Entity, relation and triple counts; any output may be null.
 *
 * # Safety
 * `store` must come from this library; non-null outputs must be valid.
 */
enum MkgcStatus mkgc_store_counts(const struct MkgcStore *store,
                                  size_t *n_entities,
                                  size_t *n_relations,
                                  size_t *n_triples);

/**
 * # Safety
 * `store` must come from this library and not be used afterwards.
 */
void mkgc_store_free(struct MkgcStore *store);

/**
 * Trains TransE on every triple of `store`.
 *
 * # Safety
 * `store` must come from this library and `out` be a valid pointer.
 */
enum MkgcStatus mkgc_transe_train(const struct MkgcStore *store,
                                  size_t dim,
                                  size_t epochs,
                                  uint64_t seed,
                                  struct MkgcTransE **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void mkgc_transe_free(struct MkgcTransE *model);

/**
 * Top-`m` tails for `(head, relation)` into `ids` and `scores` (each of
 * capacity `cap`), best first; `*len` receives the count written. With
 * `filtered` nonzero, known tails other than `keep` are skipped (`keep` may
 * be any id not in the store to skip all of them).
 *
 * # Safety
 * Handles must come from this library, `model` trained on `store`; buffers
 * must hold `cap` elements.
 */
enum MkgcStatus mkgc_transe_retrieve(const struct MkgcTransE *model,
                                     const struct MkgcStore *store,
                                     uint64_t head,
                                     uint64_t relation,
                                     size_t m,
                                     int filtered,
                                     uint64_t keep,
                                     uint64_t *ids,
                                     double *scores,
                                     size_t cap,
                                     size_t *len);

/**
 * Iterative reranking of `candidates[0..n]` for `n_t` rounds, asking
 * `scorer` for one pick per round. The final order goes to `out[0..n]`.
 *
 * # Safety
 * `candidates` and `out` must hold `n` elements; `scorer` must be non-null
 * and honor its contract.
 */
enum MkgcStatus mkgc_rerank(uint64_t head,
                            uint64_t relation,
                            const uint64_t *candidates,
                            size_t n,
                            size_t n_t,
                            MkgcScorer scorer,
                            void *user,
                            uint64_t *out);

/**
 * Hits@1/3/10 and MRR of 1-based `ranks[0..n]`.
 *
 * # Safety
 * `ranks` must hold `n` elements and `out` be valid.
 */
enum MkgcStatus mkgc_metrics(const size_t *ranks, size_t n, struct MkgcMetrics *out);

/**
 * Trainable and per-sample activated adapter parameters over `n_layers`.
 *
 * # Safety
 * Outputs must be valid pointers.
 */
enum MkgcStatus mkgc_count_params(size_t n_groups,
                                  size_t n_experts,
                                  size_t rank,
                                  size_t din,
                                  size_t dout,
                                  size_t n_layers,
                                  uint64_t *trainable,
                                  uint64_t *activated);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MKGC_H */
