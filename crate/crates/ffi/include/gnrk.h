#ifndef GNRK_H
#define GNRK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of pendulum states `(p, theta, s, omega)`.
 */
#define GNRK_NX 4

/**
 * Number of pendulum controls.
 */
#define GNRK_NU 1

typedef enum {
  GNRK_STATUS_OK = 0,
  GNRK_STATUS_NULL_POINTER = 1,
  GNRK_STATUS_INVALID_ARGUMENT = 2,
  GNRK_STATUS_NEWTON_NONCONVERGENCE = 3,
  GNRK_STATUS_SINGULAR = 4,
  GNRK_STATUS_QP_FAILURE = 5,
  GNRK_STATUS_MAX_ITERATIONS = 6,
  GNRK_STATUS_NON_FINITE = 7,
  GNRK_STATUS_PANIC = 8,
} GnrkStatus;

typedef enum {
  GNRK_GRID_UNIFORM = 0,
  /**
   * First interval equal to the sampling time, the rest split equally.
   */
  GNRK_GRID_NONUNIFORM = 1,
} GnrkGrid;

typedef enum {
  /**
   * Cost evaluated at the shooting nodes.
   */
  GNRK_COST_SHOOTING_NODE = 0,
  /**
   * Cost integrated with the Runge-Kutta scheme (GNRK).
   */
  GNRK_COST_RUNGE_KUTTA = 1,
} GnrkCost;

typedef enum {
  /**
   * Full-step SQP iterated to convergence.
   */
  GNRK_ALGORITHM_SQP = 0,
  /**
   * One real-time iteration per call.
   */
  GNRK_ALGORITHM_RTI = 1,
} GnrkAlgorithm;

/**
 * Opaque MPC controller.
 */
typedef struct GnrkController GnrkController;

/**
 * Opaque simulation plant.
 */
typedef struct GnrkPlant GnrkPlant;

/**
 * Controller configuration; fill with [`gnrk_controller_config_default`]
 * and override fields as needed.
 */
typedef struct {
  double cart_mass;
  double pole_mass;
  double length;
  double gravity;
  double q_diag[4];
  double r;
  double gamma;
  double p_min;
  double p_max;
  double u_max;
  size_t n_intervals;
  double horizon;
  GnrkGrid grid;
  double ts;
  size_t n_stages;
  size_t n_steps;
  double newton_tol;
  GnrkCost cost;
  GnrkAlgorithm algorithm;
  double sqp_tol;
  size_t sqp_max_iter;
  double qp_tol;
  size_t qp_max_iter;
} GnrkControllerConfig;

/**
 * Statistics of one controller call.
 */
typedef struct {
  size_t iterations;
  /**
   * 1 when converged SQP met its tolerance or an RTI step was taken,
   * 0 when the SQP iteration cap was hit.
   */
  int32_t converged;
  /**
   * NLP objective at the last linearization point.
   */
  double objective;
  double preparation_ms;
  double feedback_ms;
} GnrkSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Short static description of a status code.
 */
const char *gnrk_status_str(GnrkStatus status);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * without the terminator, or 0 when no error was recorded.
 *
 * # Safety
 * `buf` must be NULL or valid for `len` writes.
 */
size_t gnrk_last_error_message(char *buf, size_t len);

/**
 * Writes the default configuration into `out`.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one config.
 */
GnrkStatus gnrk_controller_config_default(GnrkControllerConfig *out);

/**
 * Builds a controller cold-started at `x_init` (length [`GNRK_NX`]).
 *
 * # Safety
 * `config` must point to a valid config, `x_init` to `GNRK_NX` values and
 * `out` to writable storage for one handle.
 */
GnrkStatus gnrk_controller_new(const GnrkControllerConfig *config,
                               const double *x_init,
                               GnrkController **out);

/**
 * Computes the control for the measured state `x0` (length [`GNRK_NX`])
 * and writes it to `u_out` (length [`GNRK_NU`]). The controller keeps its
 * iterate between calls. `info` may be NULL.
 *
 * # Safety
 * `ctrl` must come from [`gnrk_controller_new`]; the arrays must have the
 * stated lengths.
 */
GnrkStatus gnrk_controller_solve(GnrkController *ctrl,
                                 const double *x0,
                                 double *u_out,
                                 GnrkSolveInfo *info);

/**
 * Discards the iterate and cold-starts from `x_init`.
 *
 * # Safety
 * `ctrl` must come from [`gnrk_controller_new`]; `x_init` must hold
 * `GNRK_NX` values.
 */
GnrkStatus gnrk_controller_reset(GnrkController *ctrl, const double *x_init);

/**
 * Releases a controller. NULL is ignored.
 *
 * # Safety
 * `ctrl` must be NULL or come from [`gnrk_controller_new`] and not have
 * been freed.
 */
void gnrk_controller_free(GnrkController *ctrl);

/**
 * Builds the simulation plant for the model and cost weights in `config`,
 * integrating one sampling period `config.ts` with `n_stages` Radau IIA
 * stages.
 *
 * # Safety
 * `config` must point to a valid config and `out` to writable storage for
 * one handle.
 */
GnrkStatus gnrk_plant_new(const GnrkControllerConfig *config, size_t n_stages, GnrkPlant **out);

/**
 * Advances `x` (length [`GNRK_NX`]) by one sampling period under the
 * constant controls `u`. Writes the next state and, when `cost` is not
 * NULL, the cost accumulated over the period.
 *
 * # Safety
 * `plant` must come from [`gnrk_plant_new`]; the arrays must have the
 * stated lengths.
 */
GnrkStatus gnrk_plant_step(GnrkPlant *plant,
                           const double *x,
                           const double *u,
                           double *x_next,
                           double *cost);

/**
 * Releases a plant. NULL is ignored.
 *
 * # Safety
 * `plant` must be NULL or come from [`gnrk_plant_new`] and not have been
 * freed.
 */
void gnrk_plant_free(GnrkPlant *plant);

/**
 * Radau IIA tableau with `s` stages: `a` (s x s, row-major), `b` and `c`
 * (length s each).
 *
 * # Safety
 * `a` must be valid for `s * s` writes, `b` and `c` for `s` writes each.
 */
GnrkStatus gnrk_radau_iia(size_t s, double *a, double *b, double *c);

/**
 * Solves the discrete algebraic Riccati equation for `a` (nx x nx), `b`
 * (nx x nu), `q` (nx x nx) and `r` (nu x nu), all row-major, writing `P`
 * (nx x nx) to `p_out`.
 *
 * # Safety
 * Every pointer must be valid for the stated number of elements.
 */
GnrkStatus gnrk_solve_dare(size_t nx,
                           size_t nu,
                           const double *a,
                           const double *b,
                           const double *q,
                           const double *r,
                           double *p_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GNRK_H */
