/* Generated by cbindgen from the stemma-ffi crate. Do not edit. */

#ifndef STEMMA_H
#define STEMMA_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum StemmaConsensusMethod {
  STEMMA_CONSENSUS_METHOD_MRE = 0,
  STEMMA_CONSENSUS_METHOD_MAJORITY = 1,
  STEMMA_CONSENSUS_METHOD_STRICT = 2,
} StemmaConsensusMethod;

typedef enum StemmaLengthMode {
  STEMMA_LENGTH_MODE_UNIT = 0,
  STEMMA_LENGTH_MODE_CHANGES = 1,
  STEMMA_LENGTH_MODE_SUPPORT = 2,
} StemmaLengthMode;

typedef enum StemmaSearchMode {
  STEMMA_SEARCH_MODE_AUTO = 0,
  STEMMA_SEARCH_MODE_EXHAUSTIVE = 1,
  STEMMA_SEARCH_MODE_HEURISTIC = 2,
} StemmaSearchMode;

// Result of every fallible call.
typedef enum StemmaStatus {
  STEMMA_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or out-of-range argument.
  STEMMA_STATUS_INVALID_ARGUMENT = 1,
  STEMMA_STATUS_IO = 2,
  STEMMA_STATUS_XML = 3,
  // Apparatus, matrix or file-format validation failure.
  STEMMA_STATUS_VALIDATION = 4,
  STEMMA_STATUS_NEWICK = 5,
  STEMMA_STATUS_TREE = 6,
  STEMMA_STATUS_CONFIG = 7,
  // A Rust panic was caught at the boundary.
  STEMMA_STATUS_INTERNAL = 8,
} StemmaStatus;

// Opaque list of unrooted trees.
typedef struct StemmaForest StemmaForest;

// Opaque character matrix.
typedef struct StemmaMatrix StemmaMatrix;

typedef struct StemmaExtractOptions {
  bool strict_witnesses;
  // Code silent witnesses with the lemma state instead of `?`.
  bool missing_as_lemma;
  uint32_t max_states;
  // Drop sites with too many readings instead of failing.
  bool drop_overflow;
} StemmaExtractOptions;

typedef struct StemmaSearchOptions {
  enum StemmaSearchMode mode;
  uint32_t replicates;
  uint64_t seed;
  uint32_t max_trees;
  uint32_t auto_threshold;
  bool force;
} StemmaSearchOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *stemma_last_error(void);

// Library version as a static NUL-terminated string.
const char *stemma_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void stemma_string_free(char *s);

struct StemmaExtractOptions stemma_extract_options_default(void);

struct StemmaSearchOptions stemma_search_options_default(void);

// Parses TEI bytes and encodes them as a character matrix.
//
// # Safety
// `xml` must point to `len` readable bytes; `opts` may be null for defaults;
// `out` must be writable.
enum StemmaStatus stemma_matrix_from_tei(const uint8_t *xml,
                                         uintptr_t len,
                                         const struct StemmaExtractOptions *opts,
                                         struct StemmaMatrix **out);

// Reads `matrix.tsv` and `sites.tsv` from a directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum StemmaStatus stemma_matrix_read(const char *dir, struct StemmaMatrix **out);

// Writes `matrix.tsv` and `sites.tsv` into a directory.
//
// # Safety
// `m` must be a live matrix handle; `dir` a NUL-terminated string.
enum StemmaStatus stemma_matrix_write(const struct StemmaMatrix *m, const char *dir);

// Number of taxa, or 0 for null.
//
// # Safety
// `m` must be null or a live matrix handle.
uintptr_t stemma_matrix_taxon_count(const struct StemmaMatrix *m);

// Number of sites, or 0 for null.
//
// # Safety
// `m` must be null or a live matrix handle.
uintptr_t stemma_matrix_site_count(const struct StemmaMatrix *m);

// PHYLIP sequential text of the matrix.
//
// # Safety
// `m` must be a live matrix handle; `out` must be writable.
enum StemmaStatus stemma_matrix_to_phylip(const struct StemmaMatrix *m, char **out);

// # Safety
// `m` must be null or a handle not yet freed.
void stemma_matrix_free(struct StemmaMatrix *m);

// Most parsimonious trees for `m`. `best_score` may be null.
//
// # Safety
// `m` must be a live matrix handle; `opts` may be null for defaults; `out`
// must be writable.
enum StemmaStatus stemma_search(const struct StemmaMatrix *m,
                                const struct StemmaSearchOptions *opts,
                                struct StemmaForest **out,
                                uint32_t *best_score);

// Parses one or more `;`-terminated Newick trees.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum StemmaStatus stemma_forest_parse(const char *text, struct StemmaForest **out);

// Number of trees, or 0 for null.
//
// # Safety
// `f` must be null or a live forest handle.
uintptr_t stemma_forest_len(const struct StemmaForest *f);

// Canonical Newick text, one tree per line.
//
// # Safety
// `f` must be a live forest handle; `out` must be writable.
enum StemmaStatus stemma_forest_to_newick(const struct StemmaForest *f, char **out);

// Fitch score of tree `index` of `f` on `m`.
//
// # Safety
// `f` and `m` must be live handles; `out` must be writable.
enum StemmaStatus stemma_fitch_score(const struct StemmaForest *f,
                                     uintptr_t index,
                                     const struct StemmaMatrix *m,
                                     uint32_t *out);

// Consensus of all trees in `f` as a one-tree forest.
//
// # Safety
// `f` must be a live forest handle; `out` must be writable.
enum StemmaStatus stemma_consensus(const struct StemmaForest *f,
                                   enum StemmaConsensusMethod method,
                                   bool dedup,
                                   struct StemmaForest **out);

// Equal-angle SVG drawing of tree `index`. `m` is required for
// `STEMMA_LENGTH_MODE_CHANGES` and ignored otherwise (may be null).
//
// # Safety
// `f` must be a live forest handle, `m` null or a live matrix handle, `out`
// writable.
enum StemmaStatus stemma_forest_to_svg(const struct StemmaForest *f,
                                       uintptr_t index,
                                       enum StemmaLengthMode mode,
                                       const struct StemmaMatrix *m,
                                       char **out);

// # Safety
// `f` must be null or a handle not yet freed.
void stemma_forest_free(struct StemmaForest *f);

// Runs the full workflow from a run manifest. A non-null `out_dir`
// overrides the manifest's output directory.
//
// # Safety
// `manifest_path` must be a NUL-terminated string; `out_dir` null or one.
enum StemmaStatus stemma_run_manifest(const char *manifest_path, const char *out_dir, bool dry_run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEMMA_H */
