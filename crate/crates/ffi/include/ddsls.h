#ifndef DDSLS_H
#define DDSLS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DdslsStatus {
  DDSLS_STATUS_OK = 0,
  DDSLS_STATUS_NULL_POINTER = 1,
  DDSLS_STATUS_INVALID_ARGUMENT = 2,
  DDSLS_STATUS_DIMENSION = 3,
  DDSLS_STATUS_NOT_PERSISTENTLY_EXCITING = 4,
  DDSLS_STATUS_EPSILON_TOO_LARGE = 5,
  DDSLS_STATUS_INFEASIBLE = 6,
  DDSLS_STATUS_NO_CONVERGENCE = 7,
  DDSLS_STATUS_STRUCTURE = 8,
  DDSLS_STATUS_MISMATCH = 9,
  DDSLS_STATUS_EMPTY_ENSEMBLE = 10,
  DDSLS_STATUS_IO = 11,
  DDSLS_STATUS_PARSE = 12,
  DDSLS_STATUS_BUFFER_TOO_SMALL = 13,
  DDSLS_STATUS_PANIC = 14,
} DdslsStatus;

typedef enum DdslsMode {
  DDSLS_MODE_NOISELESS = 0,
  DDSLS_MODE_NAIVE = 1,
  DDSLS_MODE_ROBUST = 2,
} DdslsMode;

typedef enum DdslsStructure {
  DDSLS_STRUCTURE_BLOCK_DIAGONAL = 0,
  DDSLS_STRUCTURE_FULL = 1,
} DdslsStructure;

// Synthesized controller with its solver diagnostics.
typedef struct DdslsController DdslsController;

// Linear plant with Gaussian process noise.
typedef struct DdslsSystem DdslsSystem;

// State, input and noise record of one (possibly averaged) trajectory.
typedef struct DdslsTrajectory DdslsTrajectory;

// Quadratic stage and terminal weights.
typedef struct DdslsWeights DdslsWeights;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *ddsls_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *ddsls_last_error_message(void);

// Plant `x(t+1) = A x(t) + B u(t) + w(t)` with `w ~ N(0, noise_std² I)`.
// `a` is `n x n`, `b` is `n x m`, both row-major.
//
// # Safety
// `a` and `b` must point to `n*n` and `n*m` doubles; `out` must be writable.
enum DdslsStatus ddsls_system_new(size_t n,
                                  size_t m,
                                  const double *a,
                                  const double *b,
                                  double noise_std,
                                  struct DdslsSystem **out);

// The three-state benchmark plant.
//
// # Safety
// `out` must be writable.
enum DdslsStatus ddsls_system_benchmark(struct DdslsSystem **out);

// # Safety
// `sys` must be NULL or a handle from this library not yet freed.
void ddsls_system_free(struct DdslsSystem *sys);

// Stage weights `q` (`n x n`), `r` (`m x m`) and terminal weight `q_final`
// (`n x n`). A NULL `q_final` reuses `q`.
//
// # Safety
// Non-NULL matrix pointers must hold the stated number of doubles; `out`
// must be writable.
enum DdslsStatus ddsls_weights_new(size_t n,
                                   size_t m,
                                   const double *q,
                                   const double *r,
                                   const double *q_final,
                                   struct DdslsWeights **out);

// Stage weights `q`, `r` with the stationary Riccati solution of `sys` as
// terminal weight.
//
// # Safety
// `sys` must be a live handle; `q`, `r` must hold `n*n` and `m*m` doubles
// for the plant's dimensions; `out` must be writable.
enum DdslsStatus ddsls_weights_with_riccati_terminal(const struct DdslsSystem *sys,
                                                     const double *q,
                                                     const double *r,
                                                     struct DdslsWeights **out);

// # Safety
// `weights` must be NULL or a handle from this library not yet freed.
void ddsls_weights_free(struct DdslsWeights *weights);

// Average of `samples` trajectories of length `data_len` sharing a
// Gaussian input and zero initial state, drawn from `seed`.
//
// # Safety
// `sys` must be a live handle; `out` must be writable.
enum DdslsStatus ddsls_trajectory_averaged(const struct DdslsSystem *sys,
                                           size_t data_len,
                                           size_t samples,
                                           uint64_t seed,
                                           struct DdslsTrajectory **out);

// Spectral norm of the order-`horizon` Hankel matrix of the recorded
// noise: the smallest noise level the trajectory is consistent with.
//
// # Safety
// `traj` must be a live handle; `norm` must be writable.
enum DdslsStatus ddsls_trajectory_noise_level(const struct DdslsTrajectory *traj,
                                              size_t horizon,
                                              double *norm);

// # Safety
// `traj` must be NULL or a handle from this library not yet freed.
void ddsls_trajectory_free(struct DdslsTrajectory *traj);

// Synthesizes a controller over `horizon` steps from the state and input
// record of `traj`. `epsilon` is the assumed noise level and is only read
// in robust mode.
//
// # Safety
// `traj` and `weights` must be live handles; `out` must be writable.
enum DdslsStatus ddsls_synthesize(const struct DdslsTrajectory *traj,
                                  const struct DdslsWeights *weights,
                                  size_t horizon,
                                  enum DdslsMode mode,
                                  enum DdslsStructure structure,
                                  double epsilon,
                                  struct DdslsController **out);

// Horizon and state/input dimensions of the controller. Any output
// pointer may be NULL.
//
// # Safety
// `ctrl` must be a live handle; non-NULL outputs must be writable.
enum DdslsStatus ddsls_controller_dims(const struct DdslsController *ctrl,
                                       size_t *horizon,
                                       size_t *n,
                                       size_t *m);

// Block lower-triangular gain matrix `u = K x` over the horizon, `Lm x Ln`,
// written row-major into `out` of capacity `len`.
//
// # Safety
// `ctrl` must be a live handle; `out` must hold `len` doubles.
enum DdslsStatus ddsls_controller_gains(const struct DdslsController *ctrl,
                                        double *out,
                                        size_t len);

// Objective reported by the synthesis program.
//
// # Safety
// `ctrl` must be a live handle; `objective` must be writable.
enum DdslsStatus ddsls_controller_objective(const struct DdslsController *ctrl, double *objective);

// Selected robustness level; `*has_gamma` is 0 outside robust mode.
//
// # Safety
// `ctrl` must be a live handle; `gamma` and `has_gamma` must be writable.
enum DdslsStatus ddsls_controller_gamma(const struct DdslsController *ctrl,
                                        double *gamma,
                                        int32_t *has_gamma);

// Cost of the controller in closed loop with `sys`.
//
// # Safety
// All handles must be live; `cost` must be writable.
enum DdslsStatus ddsls_controller_true_cost(const struct DdslsController *ctrl,
                                            const struct DdslsSystem *sys,
                                            const struct DdslsWeights *weights,
                                            double *cost);

// # Safety
// `ctrl` must be NULL or a handle from this library not yet freed.
void ddsls_controller_free(struct DdslsController *ctrl);

// Optimal finite-horizon cost of `sys` under `weights`.
//
// # Safety
// Handles must be live; `cost` must be writable.
enum DdslsStatus ddsls_optimal_cost(const struct DdslsSystem *sys,
                                    const struct DdslsWeights *weights,
                                    size_t horizon,
                                    double *cost);

// Largest noise level covered by the suboptimality guarantee, given the
// optimal parameter norm and the Toeplitz noise-map norm.
double ddsls_eps_precondition(double gstar_norm, size_t horizon, double toep_norm);

// Runs an experiment command (`simulate`, `synth`, `bounds`, `mpc`,
// `concentration`, `bootstrap`) with a JSON configuration (NULL for
// defaults). On success `*summary_json` receives a string to release with
// [`ddsls_string_free`].
//
// # Safety
// `command` and non-NULL `config_json` must be NUL-terminated strings;
// `summary_json` must be writable.
enum DdslsStatus ddsls_run(const char *command, const char *config_json, char **summary_json);

// # Safety
// `s` must be NULL or a string returned by this library not yet freed.
void ddsls_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDSLS_H */
