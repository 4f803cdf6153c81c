#ifndef HEAT_RECON_H
#define HEAT_RECON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an FFI call. Config, io and solver failures use the same codes
 * as the command line exit status.
 */
typedef enum HrStatus {
  HR_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or a buffer that is too small.
   */
  HR_STATUS_INVALID_ARGUMENT = 1,
  HR_STATUS_CONFIG = 2,
  HR_STATUS_IO = 3,
  HR_STATUS_SOLVER = 4,
  /**
   * A Rust panic was caught; the handle involved should be freed.
   */
  HR_STATUS_PANIC = 5,
} HrStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct HrConfig HrConfig;

/**
 * Opaque result of an in-memory reconstruction.
 */
typedef struct HrRun HrRun;

/**
 * Scalar outcome of a reconstruction. NaN marks a quantity that is not
 * defined for the formulation (e.g. `flux_residual` for second order).
 */
typedef struct HrSummary {
  size_t nx;
  size_t nt;
  double h;
  double misfit;
  double cost;
  double observed_norm;
  double equation_residual;
  double flux_residual;
  double multiplier_norm;
  double weighted_error;
  double l2_error;
  double delta_h;
  size_t iterations;
} HrSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hr_version(void);

/**
 * Bytes needed to hold the last error message including the NUL, or 0 when
 * the last call on this thread succeeded.
 */
size_t hr_last_error_length(void);

/**
 * Copies the last error message into `buf`. Returns the number of bytes
 * written including the NUL, 0 when there is no error, or -1 when `buf` is
 * null or shorter than [`hr_last_error_length`].
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
ptrdiff_t hr_last_error_message(char *buf, size_t len);

/**
 * Default configuration (16 x 16 grid, unit weights, `mf`).
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum HrStatus hr_config_default(struct HrConfig **out);

/**
 * Parses sectioned `key = value` config text and validates it.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum HrStatus hr_config_parse(const char *text, struct HrConfig **out);

/**
 * Reads and validates a config file (run manifests are accepted).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum HrStatus hr_config_load(const char *path, struct HrConfig **out);

/**
 * Canonical text of the configuration. The returned string is owned by the
 * caller and released with [`hr_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` a valid pointer.
 */
enum HrStatus hr_config_to_text(const struct HrConfig *cfg, char **out);

/**
 * Sets the grid size; validated on the next run.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum HrStatus hr_config_set_grid(struct HrConfig *cfg, size_t nx, size_t nt);

/**
 * Sets the observation noise level and seed.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum HrStatus hr_config_set_noise(struct HrConfig *cfg, double sigma, uint64_t seed);

/**
 * Releases a config handle. Null is ignored.
 *
 * # Safety
 * `cfg` must come from this library and not be used afterwards.
 */
void hr_config_free(struct HrConfig *cfg);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void hr_string_free(char *s);

/**
 * Synthesizes the observation and reconstructs without touching the disk.
 *
 * # Safety
 * `cfg` must be a live handle; `out` a valid handle slot.
 */
enum HrStatus hr_reconstruct(const struct HrConfig *cfg, struct HrRun **out);

/**
 * Full pipeline writing the same artifacts as `heat-recon reconstruct` into
 * `out_dir`.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` a NUL-terminated string.
 */
enum HrStatus hr_run_experiment(const struct HrConfig *cfg, const char *out_dir);

/**
 * Copies the scalar summary into `out`.
 *
 * # Safety
 * `run` must be a live handle; `out` a valid pointer.
 */
enum HrStatus hr_run_summary(const struct HrRun *run, struct HrSummary *out);

/**
 * Number of cell-center rows in the reconstructed field, 0 for null.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t hr_run_rows(const struct HrRun *run);

/**
 * Number of columns: 4 (`x, t, y, lambda`) or 6 (`x, t, y, p, lambda, mu`).
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t hr_run_columns(const struct HrRun *run);

/**
 * Name of column `k`, borrowed from the handle; null when out of range.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
const char *hr_run_column_name(const struct HrRun *run, size_t k);

/**
 * Copies the field row-major into `buf`, which must hold
 * `rows * columns` doubles.
 *
 * # Safety
 * `run` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum HrStatus hr_run_values(const struct HrRun *run, double *buf, size_t len);

/**
 * Releases a run handle. Null is ignored.
 *
 * # Safety
 * `run` must come from this library and not be used afterwards.
 */
void hr_run_free(struct HrRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEAT_RECON_H */
