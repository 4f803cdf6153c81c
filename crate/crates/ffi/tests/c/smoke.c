#include <math.h>
#include <stdio.h>
#include "heat_recon.h"

int main(void) {
    HrConfig *cfg = NULL;
    if (hr_config_default(&cfg) != HR_STATUS_OK) return 10;
    if (hr_config_set_grid(cfg, 8, 8) != HR_STATUS_OK) return 11;
    HrRun *run = NULL;
    if (hr_reconstruct(cfg, &run) != HR_STATUS_OK) return 12;
    HrSummary s;
    if (hr_run_summary(run, &s) != HR_STATUS_OK) return 13;
    size_t n = hr_run_rows(run) * hr_run_columns(run);
    double buf[1024];
    if (n == 0 || n > 1024) return 14;
    if (hr_run_values(run, buf, n) != HR_STATUS_OK) return 15;
    printf("%s %zu %zu %.3e\n", hr_version(), s.nx, hr_run_rows(run), s.misfit);
    hr_run_free(run);

    /* alpha outside (0, 1) is a config error */
    HrConfig *bad = NULL;
    HrStatus st = hr_config_parse("[formulation]\nname = mf-alpha\nalpha = 1.2\n", &bad);
    if (st != HR_STATUS_CONFIG || bad != NULL) return 16;
    char msg[512];
    if (hr_last_error_message(msg, sizeof msg) <= 0) return 17;
    hr_config_free(cfg);
    return isfinite(s.misfit) ? 0 : 18;
}
