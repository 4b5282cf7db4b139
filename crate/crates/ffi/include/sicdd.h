#ifndef SICDD_H
#define SICDD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every entry point.
 */
typedef enum SicddStatus {
  SICDD_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or an out-of-range argument.
   */
  SICDD_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Rejected configuration or input data.
   */
  SICDD_STATUS_INVALID_CONFIG = 2,
  /**
   * Resource limits or numerical failure during a run.
   */
  SICDD_STATUS_RUNTIME = 3,
  /**
   * The library panicked; the handle involved should be dropped.
   */
  SICDD_STATUS_PANIC = 4,
} SicddStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct SicddConfig SicddConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sicdd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sicdd_version(void);

/**
 * Creates a configuration from a built-in preset name.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SicddStatus sicdd_config_from_preset(const char *name, struct SicddConfig **out);

/**
 * Creates a configuration from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SicddStatus sicdd_config_from_toml(const char *toml, struct SicddConfig **out);

/**
 * Serializes a configuration as TOML into a new string.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum SicddStatus sicdd_config_to_toml(const struct SicddConfig *cfg, char **out);

/**
 * Sets the master seed.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum SicddStatus sicdd_config_set_seed(struct SicddConfig *cfg, uint64_t seed);

/**
 * Sets the SNR sweep; `step` must be positive and `stop >= start`.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum SicddStatus sicdd_config_set_snr(struct SicddConfig *cfg,
                                      double start_db,
                                      double stop_db,
                                      double step_db);

/**
 * Sets the frame length and frames per SNR point.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum SicddStatus sicdd_config_set_frames(struct SicddConfig *cfg,
                                         uintptr_t symbols,
                                         uintptr_t frames);

/**
 * Releases a configuration; null is ignored.
 *
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void sicdd_config_free(struct SicddConfig *cfg);

/**
 * Runs the rate sweep and returns the rates CSV.
 *
 * # Safety
 * `cfg` must be a live handle and `out_csv` a valid pointer.
 */
enum SicddStatus sicdd_run_rates(const struct SicddConfig *cfg, char **out_csv);

/**
 * Designs polar codes, runs the FER sweep and returns the FER CSV.
 *
 * # Safety
 * `cfg` must be a live handle and `out_csv` a valid pointer.
 */
enum SicddStatus sicdd_run_fer(const struct SicddConfig *cfg, char **out_csv);

/**
 * Derives the channel taps of the configured link as CSV
 * (index, re, im).
 *
 * # Safety
 * `cfg` must be a live handle and `out_csv` a valid pointer.
 */
enum SicddStatus sicdd_taps_csv(const struct SicddConfig *cfg, char **out_csv);

/**
 * Transmit power per symbol of the configured link and alphabet at
 * unit amplitude, in normalized units.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum SicddStatus sicdd_unit_power(const struct SicddConfig *cfg, double *out);

/**
 * Writes the points of an alphabet: `kind` is 0 for PAM, 1 for ASK and
 * 2 for SQAM. `re` and `im` must each hold `capacity` values; `len`
 * receives the alphabet size.
 *
 * # Safety
 * `re`, `im` must be valid for `capacity` writes and `len` valid.
 */
enum SicddStatus sicdd_alphabet_points(uint32_t kind,
                                       uintptr_t size,
                                       double *re,
                                       double *im,
                                       uintptr_t capacity,
                                       uintptr_t *len);

/**
 * Releases a string returned by the library; null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void sicdd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SICDD_H */
