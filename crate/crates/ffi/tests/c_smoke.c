#include <math.h>
#include <stdio.h>

#include "gnrk.h"

int main(void) {
    GnrkControllerConfig cfg;
    if (gnrk_controller_config_default(&cfg) != GNRK_STATUS_OK) return 1;
    double x[GNRK_NX] = {0.0, 0.2, 0.0, 0.0};
    GnrkController *ctrl = NULL;
    if (gnrk_controller_new(&cfg, x, &ctrl) != GNRK_STATUS_OK) return 2;
    double u[GNRK_NU];
    GnrkSolveInfo info;
    if (gnrk_controller_solve(ctrl, x, u, &info) != GNRK_STATUS_OK) return 3;
    gnrk_controller_free(ctrl);
    if (!isfinite(u[0]) || info.iterations != 1) return 4;

    if (gnrk_controller_new(&cfg, NULL, &ctrl) != GNRK_STATUS_NULL_POINTER) return 5;
    char msg[128];
    if (gnrk_last_error_message(msg, sizeof msg) == 0) return 6;
    printf("u = %g, last error: %s\n", u[0], msg);
    return 0;
}
