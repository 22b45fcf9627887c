#ifndef INDUCTION_H
#define INDUCTION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum InductionStatus {
  INDUCTION_STATUS_OK = 0,
  INDUCTION_STATUS_NULL_POINTER = 1,
  INDUCTION_STATUS_INVALID_ARGUMENT = 2,
  INDUCTION_STATUS_BUFFER_TOO_SMALL = 3,
  INDUCTION_STATUS_INTEGRATION_FAILED = 4,
  INDUCTION_STATUS_NO_CONVERGENCE = 5,
  INDUCTION_STATUS_INFEASIBLE = 6,
  INDUCTION_STATUS_UNSUPPORTED_SYSTEM = 7,
  INDUCTION_STATUS_PANIC = 8,
} InductionStatus;

typedef enum InductionSex {
  INDUCTION_SEX_MALE = 0,
  INDUCTION_SEX_FEMALE = 1,
} InductionSex;

/**
 * Opaque minimum-time problem.
 */
typedef struct InductionProblem InductionProblem;

/**
 * Opaque piecewise-constant infusion schedule.
 */
typedef struct InductionSchedule InductionSchedule;

typedef struct InductionPatient {
  enum InductionSex sex;
  /**
   * years
   */
  double age;
  /**
   * kg
   */
  double weight;
  /**
   * cm
   */
  double height;
} InductionPatient;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *induction_last_error(void);

/**
 * Builds the problem for a patient at rest. `u_max` in mg/min; the BIS
 * sigmoid uses its default parameters.
 *
 * # Safety
 * `patient` must point to a valid `InductionPatient` and `out` to writable
 * storage for one handle pointer.
 */
enum InductionStatus induction_problem_new(const struct InductionPatient *patient,
                                           double bis_target,
                                           double u_max,
                                           struct InductionProblem **out);

/**
 * # Safety
 * `problem` must be NULL or a handle from `induction_problem_new` not yet freed.
 */
void induction_problem_free(struct InductionProblem *problem);

/**
 * Writes the target equilibrium: four masses (mg) and the holding infusion (mg/min).
 *
 * # Safety
 * `x_e` must have room for 4 doubles; `u_e` must be writable.
 */
enum InductionStatus induction_problem_equilibrium(const struct InductionProblem *problem,
                                                   double *x_e,
                                                   double *u_e);

/**
 * Writes the four eigenvalues of `A`, ascending.
 *
 * # Safety
 * `out` must have room for 4 doubles.
 */
enum InductionStatus induction_problem_eigenvalues(const struct InductionProblem *problem,
                                                   double *out);

/**
 * Strategy enumeration. On success `*out` receives a new schedule and
 * `*strategy` (if not NULL) the winning strategy number.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum InductionStatus induction_solve_strategy(const struct InductionProblem *problem,
                                              struct InductionSchedule **out,
                                              uint32_t *strategy);

/**
 * Shooting on the default seed grid. `*residual_norm` (if not NULL)
 * receives the certificate's residual.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum InductionStatus induction_solve_shooting(const struct InductionProblem *problem,
                                              struct InductionSchedule **out,
                                              double *residual_norm);

/**
 * Builds a schedule from `n` levels and `n - 1` breakpoints.
 *
 * # Safety
 * `levels` must hold `n` doubles, `breakpoints` `n - 1` (may be NULL when
 * `n == 1`), and `out` must be writable.
 */
enum InductionStatus induction_schedule_new(const double *levels,
                                            const double *breakpoints,
                                            uintptr_t n,
                                            double t_f,
                                            struct InductionSchedule **out);

/**
 * # Safety
 * `schedule` must be NULL or a live schedule handle.
 */
void induction_schedule_free(struct InductionSchedule *schedule);

/**
 * Final time in minutes, or NaN for a NULL handle.
 *
 * # Safety
 * `schedule` must be NULL or a live schedule handle.
 */
double induction_schedule_t_f(const struct InductionSchedule *schedule);

/**
 * Copies the levels (mg/min). `*len` always receives the count; pass a
 * NULL buffer to query it.
 *
 * # Safety
 * `buf` must have room for `cap` doubles; `len` must be writable.
 */
enum InductionStatus induction_schedule_levels(const struct InductionSchedule *schedule,
                                               double *buf,
                                               uintptr_t cap,
                                               uintptr_t *len);

/**
 * Copies the switch times (min), same protocol as `induction_schedule_levels`.
 *
 * # Safety
 * `buf` must have room for `cap` doubles; `len` must be writable.
 */
enum InductionStatus induction_schedule_breakpoints(const struct InductionSchedule *schedule,
                                                    double *buf,
                                                    uintptr_t cap,
                                                    uintptr_t *len);

/**
 * State (4 masses, mg) reached at `t_f` from the problem's initial state.
 *
 * # Safety
 * Both handles must be live; `x_out` must have room for 4 doubles.
 */
enum InductionStatus induction_schedule_endpoint(const struct InductionProblem *problem,
                                                 const struct InductionSchedule *schedule,
                                                 double *x_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INDUCTION_H */
