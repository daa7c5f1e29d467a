#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "gridsens.h"

#define CHECK(call)                                                    \
    do {                                                               \
        GsStatus s_ = (call);                                          \
        if (s_ != GS_STATUS_OK) {                                      \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,          \
                    gs_last_error_message());                          \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(int argc, char **argv) {
    if (argc < 2) return 2;
    GsCase *c = NULL;
    GsSolution *sol = NULL;
    GsLinearization *lin = NULL;
    CHECK(gs_case_load(argv[1], &c));
    CHECK(gs_solve(c, 0.0, 0, &sol));
    CHECK(gs_linearize(sol, GS_MODE_FULL, &lin));

    size_t n = gs_case_branch_count(c);
    size_t *br = malloc(n * sizeof *br);
    double *sev = malloc(n * sizeof *sev);
    int *isl = malloc(n * sizeof *isl);
    size_t count = 0;
    CHECK(gs_screen(lin, GS_METRIC_VMAG_INF, br, sev, isl, n, &count));
    printf("buses %zu iterations %zu outages %zu first %zu %d\n",
           gs_case_bus_count(c), gs_solution_iterations(sol), count, br[0], isl[0]);

    GsCase *missing = NULL;
    GsStatus s = gs_case_load("/nonexistent.m", &missing);
    printf("missing %d\n", (int)s);

    free(br);
    free(sev);
    free(isl);
    gs_linearization_free(lin);
    gs_solution_free(sol);
    gs_case_free(c);
    return missing == NULL ? 0 : 1;
}
