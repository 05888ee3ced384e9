/* Robust synthesis on the benchmark plant through the C interface. */
#include <stdio.h>
#include <stdlib.h>

#include "ddsls.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    DdslsStatus s_ = (call);                                               \
    if (s_ != DDSLS_STATUS_OK) {                                           \
      fprintf(stderr, "%s: %d %s\n", #call, (int)s_,                       \
              ddsls_last_error_message());                                 \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  const double q[9] = {1e-3, 0, 0, 0, 1e-3, 0, 0, 0, 1e-3};
  const double r[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  DdslsSystem *sys = NULL;
  DdslsWeights *weights = NULL;
  DdslsTrajectory *traj = NULL;
  DdslsController *ctrl = NULL;
  double eps, gamma, jhat, jstar;
  int has_gamma;
  size_t horizon, n, m;

  CHECK(ddsls_system_benchmark(&sys));
  CHECK(ddsls_weights_with_riccati_terminal(sys, q, r, &weights));
  CHECK(ddsls_trajectory_averaged(sys, 45, 64, 7, &traj));
  CHECK(ddsls_trajectory_noise_level(traj, 10, &eps));
  CHECK(ddsls_synthesize(traj, weights, 10, DDSLS_MODE_ROBUST,
                         DDSLS_STRUCTURE_BLOCK_DIAGONAL, eps, &ctrl));
  CHECK(ddsls_controller_gamma(ctrl, &gamma, &has_gamma));
  CHECK(ddsls_controller_dims(ctrl, &horizon, &n, &m));
  double *gains = malloc(sizeof(double) * horizon * n * horizon * m);
  CHECK(ddsls_controller_gains(ctrl, gains, horizon * n * horizon * m));
  CHECK(ddsls_controller_true_cost(ctrl, sys, weights, &jhat));
  CHECK(ddsls_optimal_cost(sys, weights, 10, &jstar));
  printf("version %s eps %.6g gamma %.6g jhat %.10g jstar %.10g\n",
         ddsls_version(), eps, gamma, jhat, jstar);

  free(gains);
  ddsls_controller_free(ctrl);
  ddsls_trajectory_free(traj);
  ddsls_weights_free(weights);
  ddsls_system_free(sys);
  return has_gamma && jhat >= jstar ? 0 : 1;
}
