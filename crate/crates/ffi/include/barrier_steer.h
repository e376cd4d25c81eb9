#ifndef BARRIER_STEER_H
#define BARRIER_STEER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum BsMode {
  BS_MODE_QP = 0,
  BS_MODE_TOP2 = 1,
  BS_MODE_LSE = 2,
} BsMode;

// Result codes. Zero is success.
typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_POINTER = 1,
  BS_STATUS_INVALID_ARGUMENT = 2,
  BS_STATUS_IO = 3,
  // Malformed model file or data.
  BS_STATUS_FORMAT = 4,
  BS_STATUS_DIMENSION_MISMATCH = 5,
  BS_STATUS_NON_FINITE = 6,
  // A Rust panic was caught at the boundary.
  BS_STATUS_PANIC = 7,
} BsStatus;

// Opaque barrier bank.
typedef struct BsBank BsBank;

// Opaque steering session (bank plus configuration).
typedef struct BsSession BsSession;

// Filter parameters; start from [`bs_config_default`].
typedef struct BsConfig {
  double alpha;
  double delta;
  double kappa;
  double dt;
  enum BsMode mode;
  double grad_floor;
  double qp_tol;
} BsConfig;

// Per-call diagnostics written by the steering functions.
typedef struct BsStepInfo {
  // Smallest head margin `b_k - delta` before the step.
  double min_margin_before;
  // Smallest head margin at the corrected state.
  double min_margin_after;
  // Heads with a positive multiplier.
  size_t active_constraints;
  // 1 when the filter fell back to a least-violating or passthrough control.
  int32_t fallback;
} BsStepInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *bs_last_error(void);

// Library version as a static string.
const char *bs_version(void);

// Default filter parameters.
struct BsConfig bs_config_default(void);

// Load a bank from a model file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum BsStatus bs_bank_load(const char *path, struct BsBank **out);

// Bank with one half-space `b(h) = normal . h + offset` per row of
// `normals` (row-major `heads x dim`).
//
// # Safety
// `normals` must hold `heads * dim` values, `offsets` `heads` values; `out`
// must be writable.
enum BsStatus bs_bank_half_spaces(const double *normals,
                                  const double *offsets,
                                  size_t heads,
                                  size_t dim,
                                  struct BsBank **out);

// # Safety
// `bank` must come from a `bs_bank_*` constructor and not be freed twice.
void bs_bank_free(struct BsBank *bank);

// Number of heads, or 0 for a null bank.
//
// # Safety
// `bank` must be null or a live bank.
size_t bs_bank_len(const struct BsBank *bank);

// Latent dimension, or 0 for a null bank.
//
// # Safety
// `bank` must be null or a live bank.
size_t bs_bank_input_dim(const struct BsBank *bank);

// Head values at `h` into `values_out` (length `bs_bank_len`).
//
// # Safety
// `h` must hold `dim` values and `values_out` room for every head.
enum BsStatus bs_bank_values(const struct BsBank *bank,
                             const double *h,
                             size_t dim,
                             double *values_out);

// New session over a copy of `bank`. A null `config` means the defaults.
//
// # Safety
// `bank` must be live; `config` null or valid; `out` writable.
enum BsStatus bs_session_new(const struct BsBank *bank,
                             const struct BsConfig *config,
                             struct BsSession **out);

// # Safety
// `session` must come from [`bs_session_new`] and not be freed twice.
void bs_session_free(struct BsSession *session);

// Filter the nominal control `u_nom` at `h_prev`. Writes the safe control to
// `u_out` and the corrected next state to `h_out`; `info` may be null.
//
// # Safety
// `h_prev` and `u_nom` must hold `dim` values, `u_out` and `h_out` room for
// `dim` values; `info` null or writable.
enum BsStatus bs_session_steer_control(const struct BsSession *session,
                                       const double *h_prev,
                                       const double *u_nom,
                                       size_t dim,
                                       double *u_out,
                                       double *h_out,
                                       struct BsStepInfo *info);

// Filter the transition `h_prev -> h_t`, with nominal control
// `(h_t - h_prev) / dt`. Outputs as in [`bs_session_steer_control`].
//
// # Safety
// As for [`bs_session_steer_control`], with `h_t` holding `dim` values.
enum BsStatus bs_session_steer(const struct BsSession *session,
                               const double *h_prev,
                               const double *h_t,
                               size_t dim,
                               double *u_out,
                               double *h_out,
                               struct BsStepInfo *info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BARRIER_STEER_H */
