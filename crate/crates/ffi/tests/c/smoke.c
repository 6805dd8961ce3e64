#include <stdio.h>
#include "driftsafe.h"

int main(int argc, char **argv) {
    char err[256];
    DsScenario *s = NULL;
    DsPlan *p = NULL;
    size_t count = 0;
    bool pass = false;

    if (argc < 2) return 2;
    if (ds_scenario_load(argv[1], &s) != DS_STATUS_OK ||
        ds_plan_from_waypoints(s, &p) != DS_STATUS_OK ||
        ds_plan_burn_count(p, &count) != DS_STATUS_OK ||
        ds_drift_verify(s, p, &pass, NULL) != DS_STATUS_OK) {
        ds_last_error(err, sizeof err);
        fprintf(stderr, "%s\n", err);
        return 1;
    }
    printf("burns %zu pass %d\n", count, pass ? 1 : 0);
    ds_plan_free(p);
    ds_scenario_free(s);
    return 0;
}
