#include <math.h>
#include <stdio.h>

#include "induction.h"

int main(void) {
    InductionPatient patient = {INDUCTION_SEX_MALE, 53.0, 77.0, 177.0};
    InductionProblem *problem = NULL;
    InductionSchedule *schedule = NULL;
    uint32_t strategy = 0;
    double bp[4];
    uintptr_t len = 0;

    if (induction_problem_new(&patient, 50.0, 106.0907, &problem) != INDUCTION_STATUS_OK) {
        fprintf(stderr, "problem: %s\n", induction_last_error());
        return 1;
    }
    if (induction_solve_strategy(problem, &schedule, &strategy) != INDUCTION_STATUS_OK) {
        fprintf(stderr, "solve: %s\n", induction_last_error());
        return 2;
    }
    if (induction_schedule_breakpoints(schedule, bp, 4, &len) != INDUCTION_STATUS_OK || len != 1) {
        return 3;
    }
    printf("strategy %u t_c %.7f t_f %.7f\n", strategy, bp[0], induction_schedule_t_f(schedule));
    int ok = strategy == 3 && fabs(bp[0] - 0.5467) < 1e-3 && fabs(induction_schedule_t_f(schedule) - 1.8397) < 1e-3;
    induction_schedule_free(schedule);
    induction_problem_free(problem);
    return ok ? 0 : 4;
}
