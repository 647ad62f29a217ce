#ifndef NLS_FGR_H
#define NLS_FGR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes shared by every entry point; 2–4 match the CLI exit codes.
 */
typedef enum NlsStatus {
  NLS_STATUS_OK = 0,
  NLS_STATUS_INVALID_ARGUMENT = 1,
  NLS_STATUS_ASSUMPTION_FAILED = 2,
  NLS_STATUS_NON_CONVERGENCE = 3,
  NLS_STATUS_USAGE = 4,
  NLS_STATUS_IO = 5,
  NLS_STATUS_PANIC = 6,
} NlsStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct NlsConfig NlsConfig;

/**
 * FGR tensors at one branch point.
 */
typedef struct NlsFgr NlsFgr;

/**
 * Grid, potential and linear spectrum built from a configuration.
 */
typedef struct NlsLab NlsLab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, or 0 when none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t nls_last_error(char *buf, size_t len);

/**
 * Parses a TOML configuration held in memory.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum NlsStatus nls_config_from_toml(const char *text, struct NlsConfig **out);

/**
 * Reads and parses a TOML configuration file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum NlsStatus nls_config_load(const char *path, struct NlsConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from `nls_config_*` not yet freed.
 */
void nls_config_free(struct NlsConfig *cfg);

/**
 * Runs one CLI command ("spectrum", "branch", ...) with its artifacts.
 *
 * # Safety
 * `cfg` must be a live configuration handle and `command` a NUL-terminated string.
 */
enum NlsStatus nls_run_command(const struct NlsConfig *cfg, const char *command);

/**
 * Builds the grid, potential and linear spectrum of a configuration.
 *
 * # Safety
 * `cfg` must be a live configuration handle and `out` a valid pointer.
 */
enum NlsStatus nls_lab_new(const struct NlsConfig *cfg, struct NlsLab **out);

/**
 * # Safety
 * `lab` must be null or a handle from `nls_lab_new` not yet freed.
 */
void nls_lab_free(struct NlsLab *lab);

/**
 * Writes up to `cap` bound-state energies and stores the total count in `count`.
 *
 * # Safety
 * `lab` must be live, `energies` null or valid for `cap` doubles, `count` valid.
 */
enum NlsStatus nls_lab_energies(const struct NlsLab *lab,
                                double *energies,
                                size_t cap,
                                size_t *count);

/**
 * 1 when the trapped-level hypotheses hold, 0 otherwise.
 *
 * # Safety
 * `lab` must be a live handle.
 */
int32_t nls_lab_assumptions_hold(const struct NlsLab *lab);

/**
 * Computes the FGR tensors at the branch point λ.
 *
 * # Safety
 * `lab` must be a live handle and `out` a valid pointer.
 */
enum NlsStatus nls_fgr_compute(const struct NlsLab *lab, double lambda, struct NlsFgr **out);

/**
 * # Safety
 * `fgr` must be null or a handle from `nls_fgr_compute` not yet freed.
 */
void nls_fgr_free(struct NlsFgr *fgr);

/**
 * Number of neutral modes described by the tensors.
 *
 * # Safety
 * `fgr` must be a live handle.
 */
size_t nls_fgr_modes(const struct NlsFgr *fgr);

/**
 * δ at the branch point of the tensors.
 *
 * # Safety
 * `fgr` must be a live handle.
 */
double nls_fgr_delta(const struct NlsFgr *fgr);

/**
 * Evaluates z*Γz (`leading` = 0) or z*Γ₀z (`leading` ≠ 0) at z = re + i·im.
 *
 * # Safety
 * `fgr` must be live, `re` and `im` valid for `n` doubles, `out` valid.
 */
enum NlsStatus nls_fgr_form(const struct NlsFgr *fgr,
                            const double *re,
                            const double *im,
                            size_t n,
                            int32_t leading,
                            double *out);

/**
 * |z(t)|² = (|z₀|⁻² + 2γ̂t)⁻¹.
 */
double nls_scalar_decay(double z0_sq, double gamma_hat, double t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLS_FGR_H */
