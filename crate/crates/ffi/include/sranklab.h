/* C interface for the sranklab effective-rank laboratory. */

#ifndef SRANKLAB_H
#define SRANKLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every API call.
 */
typedef enum SrlStatus {
  /**
   * Success.
   */
  SrlOk = 0,
  /**
   * A required pointer argument was null.
   */
  SrlNullArgument = 1,
  /**
   * An argument was out of range or malformed.
   */
  SrlInvalidArgument = 2,
  /**
   * A string argument was not valid UTF-8.
   */
  SrlInvalidUtf8 = 3,
  /**
   * The computation failed; see `srl_last_error`.
   */
  SrlComputeError = 4,
  /**
   * A panic was caught at the boundary; see `srl_last_error`.
   */
  SrlInternalError = 5,
} SrlStatus;

/**
 * Parsed experiment configuration. Opaque; release with `srl_config_free`.
 */
typedef struct SrlConfig SrlConfig;

/**
 * One completed experiment run. Opaque; release with `srl_trace_free`.
 */
typedef struct SrlTrace SrlTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message for this thread into `buf` (NUL terminated,
 * truncated to `cap` bytes). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (length query).
 */
uintptr_t srl_last_error(char *buf, uintptr_t cap);

/**
 * Effective rank of a non-increasing singular value spectrum.
 *
 * # Safety
 * `sigma` must point to `len` doubles; `out` must be a valid pointer.
 */
enum SrlStatus srl_srank(const double *sigma, uintptr_t len, double delta, uintptr_t *out);

/**
 * Singular values of a row-major `rows` x `cols` matrix, written to `out`
 * (capacity `min(rows, cols)`) in non-increasing order.
 *
 * # Safety
 * `data` must point to `rows * cols` doubles and `out` to
 * `min(rows, cols)` writable doubles.
 */
enum SrlStatus srl_singular_values(const double *data, uintptr_t rows, uintptr_t cols, double *out);

/**
 * Parse a flat `key = value` configuration text into an opaque handle.
 * On success `*out` owns the handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum SrlStatus srl_config_parse(const char *text, struct SrlConfig **out);

/**
 * Release a configuration handle. Null is a no-op.
 *
 * # Safety
 * `cfg` must come from `srl_config_parse` and not be used afterwards.
 */
void srl_config_free(struct SrlConfig *cfg);

/**
 * Copy the 16-character configuration digest into `buf` (NUL terminated).
 *
 * # Safety
 * `cfg` must be a live handle; `buf` must hold at least `cap` bytes.
 */
enum SrlStatus srl_config_digest(const struct SrlConfig *cfg, char *buf, uintptr_t cap);

/**
 * Run one seed of the experiment. On success `*out` owns the trace handle.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be a valid pointer.
 */
enum SrlStatus srl_run_seed(const struct SrlConfig *cfg, uint64_t seed, struct SrlTrace **out);

/**
 * Release a trace handle. Null is a no-op.
 *
 * # Safety
 * `trace` must come from `srl_run_seed` and not be used afterwards.
 */
void srl_trace_free(struct SrlTrace *trace);

/**
 * Number of data rows in the trace.
 *
 * # Safety
 * `trace` must be a live handle.
 */
uintptr_t srl_trace_rows(const struct SrlTrace *trace);

/**
 * Number of columns in the trace.
 *
 * # Safety
 * `trace` must be a live handle.
 */
uintptr_t srl_trace_columns(const struct SrlTrace *trace);

/**
 * Whether the run was flagged as diverged (non-finite metrics).
 *
 * # Safety
 * `trace` must be a live handle.
 */
bool srl_trace_diverged(const struct SrlTrace *trace);

/**
 * Copy the name of column `index` into `buf` (NUL terminated). Returns the
 * full name length, or 0 if the index is out of range.
 *
 * # Safety
 * `trace` must be a live handle; `buf` must hold `cap` bytes or be null.
 */
uintptr_t srl_trace_column_name(const struct SrlTrace *trace,
                                uintptr_t index,
                                char *buf,
                                uintptr_t cap);

/**
 * Read one cell of the trace into `out`.
 *
 * # Safety
 * `trace` must be a live handle; `out` must be a valid pointer.
 */
enum SrlStatus srl_trace_value(const struct SrlTrace *trace,
                               uintptr_t row,
                               uintptr_t column,
                               double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SRANKLAB_H */
