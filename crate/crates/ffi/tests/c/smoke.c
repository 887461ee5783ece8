#include <stdio.h>
#include <string.h>
#include "arvdm.h"

static const char *CONFIG =
    "seed = 3\n"
    "[ladder]\nkind = \"outpaint\"\nw = 2\nhorizon = \"8\"\n"
    "[run]\nm_init = 32\nm_ar = 32\nk = 2\n";

int main(void) {
    ArvdmRunConfig *cfg = NULL;
    ArvdmReport *rep = NULL;
    double kl = -1.0, mb[4];
    size_t n = 0;
    if (arvdm_config_parse(CONFIG, NULL, &cfg) != ARVDM_STATUS_OK) return 1;
    if (arvdm_decompose(cfg, &rep) != ARVDM_STATUS_OK) return 2;
    if (arvdm_report_measured_kl(rep, &kl) != ARVDM_STATUS_OK || !(kl > 0.0)) return 3;
    if (arvdm_report_mb(rep, mb, 4, &n) != ARVDM_STATUS_OK || n != 2) return 4;
    if (arvdm_ladder_parse("w = [", NULL) != ARVDM_STATUS_NULL_POINTER) return 5;
    if (arvdm_last_error() == NULL) return 6;
    printf("kl=%.6e version=%s\n", kl, arvdm_version());
    arvdm_report_free(rep);
    arvdm_config_free(cfg);
    return 0;
}
