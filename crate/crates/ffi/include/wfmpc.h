#ifndef WFMPC_H
#define WFMPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. The numeric values match the CLI exit codes.
 */
typedef enum WfmpcStatus {
  WFMPC_STATUS_OK = 0,
  /**
   * Null pointer, wrong buffer length or invalid UTF-8.
   */
  WFMPC_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Bad scenario, unknown controller or problem too large.
   */
  WFMPC_STATUS_CONFIG = 2,
  /**
   * Solver did not converge, plant left its envelope, or internal panic.
   */
  WFMPC_STATUS_SOLVER = 3,
  /**
   * The constraints admit no solution.
   */
  WFMPC_STATUS_INFEASIBLE = 4,
} WfmpcStatus;

/**
 * Opaque dispatcher handle.
 */
typedef struct WfmpcDispatcher WfmpcDispatcher;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a dispatcher for `scenario`.
 *
 * `controller` may be null to use the scenario's own controller, or one of
 * `scheduler`, `proportional`, `edmpc`, `dmpc`, `smpc`. `n_h < 0` keeps the
 * scenario horizon. On success `*out` owns a handle to be released with
 * [`wfmpc_dispatcher_free`].
 *
 * # Safety
 * `scenario` and a non-null `controller` must be NUL-terminated strings and
 * `out` must be writable.
 */
enum WfmpcStatus wfmpc_dispatcher_new(const char *scenario,
                                      const char *controller,
                                      int32_t n_h,
                                      struct WfmpcDispatcher **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `h` must come from [`wfmpc_dispatcher_new`] and not be used afterwards.
 */
void wfmpc_dispatcher_free(struct WfmpcDispatcher *h);

/**
 * Number of turbines and length of the stacked state.
 *
 * # Safety
 * `h` must be a live handle; the out pointers must be writable or null.
 */
enum WfmpcStatus wfmpc_dispatcher_dims(const struct WfmpcDispatcher *h,
                                       size_t *n_turbines,
                                       size_t *n_states);

/**
 * Override the solver tolerance.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum WfmpcStatus wfmpc_dispatcher_set_tolerance(struct WfmpcDispatcher *h, double tol);

/**
 * One dispatch step.
 *
 * `x` is the stacked deviation state (length `n_states`), `d` the wind
 * deviations and `v` the measured winds (both length `n_turbines`, m/s).
 * Writes the per-turbine power demands in W to `p_dem` (length
 * `n_turbines`). On failure `p_dem` is left untouched.
 *
 * # Safety
 * `h` must be a live handle and each pointer valid for its stated length.
 */
enum WfmpcStatus wfmpc_dispatch(struct WfmpcDispatcher *h,
                                const double *x,
                                size_t x_len,
                                const double *d,
                                size_t d_len,
                                const double *v,
                                size_t v_len,
                                double *p_dem,
                                size_t p_dem_len);

/**
 * Run the scenario's closed loop for one seed and write
 * `[J_P, J_Ms, J_Mt, J_tilde]` to `metrics`.
 *
 * # Safety
 * `scenario` must be a NUL-terminated string and `metrics` valid for 4 doubles.
 */
enum WfmpcStatus wfmpc_simulate(const char *scenario, uint64_t seed, double *metrics);

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t wfmpc_last_error(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WFMPC_H */
