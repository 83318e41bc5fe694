#ifndef V2XSIM_H
#define V2XSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Config and invariant failures match the CLI exit codes.
 */
typedef enum V2xStatus {
  V2X_STATUS_OK = 0,
  V2X_STATUS_CONFIG = 1,
  V2X_STATUS_INVARIANT = 2,
  V2X_STATUS_IO = 3,
  V2X_STATUS_DATA_FILE = 4,
  V2X_STATUS_INVALID_ARGUMENT = 5,
  V2X_STATUS_NULL_POINTER = 6,
  V2X_STATUS_UTF8 = 7,
  V2X_STATUS_PANIC = 8,
} V2xStatus;

typedef enum V2xSlice {
  V2X_SLICE_SAFETY = 0,
  V2X_SLICE_VIDEO = 1,
} V2xSlice;

/**
 * Simulation parameters.
 */
typedef struct V2xConfig V2xConfig;

/**
 * Metrics of a finished run.
 */
typedef struct V2xResult V2xResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *v2x_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *v2x_last_error_message(void);

/**
 * A config holding every default.
 */
struct V2xConfig *v2x_config_new(void);

/**
 * Parse `key = value` config text into a new handle stored in `*out`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum V2xStatus v2x_config_parse(const char *text, struct V2xConfig **out);

/**
 * Set one key. `scenario` also resets the gap band to that scenario's.
 * Cross-key validation happens in [`v2x_run`].
 *
 * # Safety
 * `config` must come from this library; `key` and `value` must be
 * NUL-terminated strings.
 */
enum V2xStatus v2x_config_set(struct V2xConfig *config, const char *key, const char *value);

/**
 * The resolved config as text; release with [`v2x_string_free`].
 *
 * # Safety
 * `config` must come from this library.
 */
char *v2x_config_echo(const struct V2xConfig *config);

/**
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void v2x_config_free(struct V2xConfig *config);

/**
 * Run one simulation; on success `*out` receives a result handle.
 *
 * # Safety
 * `config` must come from this library and `out` be a valid pointer.
 */
enum V2xStatus v2x_run(const struct V2xConfig *config, struct V2xResult **out);

/**
 * Safety packet reception ratio of the run.
 *
 * # Safety
 * `result` must come from this library and `out` be a valid pointer.
 */
enum V2xStatus v2x_result_prr(const struct V2xResult *result, double *out);

/**
 * Fraction of vehicles of `slice` whose throughput reaches `target_kbps`.
 *
 * # Safety
 * `result` must come from this library and `out` be a valid pointer.
 */
enum V2xStatus v2x_result_target_probability(const struct V2xResult *result,
                                             enum V2xSlice slice,
                                             double target_kbps,
                                             double *out);

/**
 * Median number of slice access points over re-slices.
 *
 * # Safety
 * `result` must come from this library and `out` be a valid pointer.
 */
enum V2xStatus v2x_result_median_access_points(const struct V2xResult *result, double *out);

/**
 * Total bits delivered to end users.
 *
 * # Safety
 * `result` must come from this library and `out` be a valid pointer.
 */
enum V2xStatus v2x_result_delivered_bits(const struct V2xResult *result, uint64_t *out);

/**
 * Write the result CSVs and run metadata into `dir`.
 *
 * # Safety
 * `result` must come from this library; `dir` must be a NUL-terminated
 * path.
 */
enum V2xStatus v2x_result_write(const struct V2xResult *result, const char *dir);

/**
 * # Safety
 * `result` must come from this library and not be used afterwards.
 */
void v2x_result_free(struct V2xResult *result);

/**
 * # Safety
 * `s` must be a string returned by this library.
 */
void v2x_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* V2XSIM_H */
