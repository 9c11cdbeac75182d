#ifndef IPL_H
#define IPL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum IplStatus {
  IPL_STATUS_OK = 0,
  IPL_STATUS_NULL_ARGUMENT = 1,
  IPL_STATUS_INVALID_UTF8 = 2,
  IPL_STATUS_IO = 3,
  IPL_STATUS_FORMAT = 4,
  IPL_STATUS_INTEGRITY = 5,
  IPL_STATUS_CONFIG = 6,
  IPL_STATUS_STATE = 7,
  IPL_STATUS_PRECONDITION = 8,
  IPL_STATUS_NUMERIC = 9,
  IPL_STATUS_NOT_FOUND = 10,
  IPL_STATUS_DOMAIN = 11,
  IPL_STATUS_SIZE = 12,
  IPL_STATUS_JSON = 13,
  IPL_STATUS_OUT_OF_RANGE = 14,
  IPL_STATUS_PANIC = 15,
} IplStatus;

/**
 * Opaque candidate pool.
 */
typedef struct IplPool IplPool;

/**
 * Opaque finished run: trace, trained prompt and evaluation metrics.
 */
typedef struct IplRun IplRun;

/**
 * Opaque embedding store.
 */
typedef struct IplStore IplStore;

typedef struct IplStoreInfo {
  size_t dim;
  size_t tokens;
  size_t images;
  size_t classes;
  size_t vocab;
} IplStoreInfo;

typedef struct IplMetrics {
  double base;
  double novel;
  double hm;
} IplMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success. The pointer stays
 * valid until the next `ipl_*` call on the same thread.
 */
const char *ipl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ipl_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ipl_string_free(char *s);

/**
 * Loads a store directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum IplStatus ipl_store_load(const char *dir, struct IplStore **out_store);

/**
 * Generates a synthetic store. `config_json` may be null for defaults.
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `out` must be writable.
 */
enum IplStatus ipl_store_synth(const char *config_json, uint64_t seed, struct IplStore **out_store);

/**
 * Writes the store to a directory.
 *
 * # Safety
 * `store` must be a live handle; `dir` must be NUL-terminated.
 */
enum IplStatus ipl_store_save(const struct IplStore *store, const char *dir);

/**
 * # Safety
 * `store` must be a live handle; `info` must be writable.
 */
enum IplStatus ipl_store_info(const struct IplStore *store, struct IplStoreInfo *info);

/**
 * # Safety
 * `store` must be null or a handle not yet freed.
 */
void ipl_store_free(struct IplStore *store);

/**
 * Filters the store vocabulary. `filter_json` may be null for defaults.
 *
 * # Safety
 * `store` must be a live handle; `filter_json` null or NUL-terminated; `out_pool` writable.
 */
enum IplStatus ipl_pool_filter(const struct IplStore *store,
                               const char *filter_json,
                               struct IplPool **out_pool);

/**
 * # Safety
 * `pool` must be a live handle; `len` writable.
 */
enum IplStatus ipl_pool_len(const struct IplPool *pool, size_t *len);

/**
 * Word at `index`; the caller frees it with [`ipl_string_free`].
 *
 * # Safety
 * `pool` must be a live handle; `word` writable.
 */
enum IplStatus ipl_pool_word(const struct IplPool *pool, size_t index, char **word);

/**
 * # Safety
 * `pool` must be null or a handle not yet freed.
 */
void ipl_pool_free(struct IplPool *pool);

/**
 * Runs selection and training, then evaluates. `config_json` may be null for defaults.
 *
 * # Safety
 * `store` and `pool` must be live handles; `config_json` null or NUL-terminated;
 * `out_run` writable.
 */
enum IplStatus ipl_run(const struct IplStore *store,
                       const struct IplPool *pool,
                       const char *config_json,
                       struct IplRun **out_run);

/**
 * # Safety
 * `run` must be a live handle; `metrics` writable.
 */
enum IplStatus ipl_run_metrics(const struct IplRun *run, struct IplMetrics *metrics);

/**
 * # Safety
 * `run` must be a live handle; `count` writable.
 */
enum IplStatus ipl_run_selected_count(const struct IplRun *run, size_t *count);

/**
 * Selected word at `index`, in selection order; the caller frees it.
 *
 * # Safety
 * `run` must be a live handle; `word` writable.
 */
enum IplStatus ipl_run_selected_word(const struct IplRun *run, size_t index, char **word);

/**
 * The run trace as JSON; the caller frees it.
 *
 * # Safety
 * `run` must be a live handle; `json` writable.
 */
enum IplStatus ipl_run_trace_json(const struct IplRun *run, char **json);

/**
 * Writes trace, metrics, selected words, gains and checkpoint into `dir`.
 *
 * # Safety
 * `run` must be a live handle; `dir` NUL-terminated.
 */
enum IplStatus ipl_run_write(const struct IplRun *run, const char *dir);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void ipl_run_free(struct IplRun *run);

/**
 * `2ab/(a+b)` for accuracies in percent.
 *
 * # Safety
 * `out_hm` must be writable.
 */
enum IplStatus ipl_harmonic_mean(double base, double novel, double *out_hm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IPL_H */
