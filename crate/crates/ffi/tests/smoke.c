#include <stdio.h>
#include <string.h>
#include "dina.h"

int main(void) {
    enum { N = 400, D = 1 };
    double x[N * D], y[N];
    uint32_t w[N];
    for (int i = 0; i < N; i++) {
        x[i] = (i % 20) / 10.0 - 1.0;
        w[i] = (uint32_t)(i % 2);
        y[i] = 1.0 + 0.5 * x[i] + (w[i] ? 2.0 : 0.0) + ((i * 7919) % 11 - 5) / 10.0;
    }
    DinaDataset *data = NULL;
    if (dina_dataset_new("gaussian", N, D, x, w, y, NULL, 2, &data) != DINA_STATUS_OK) {
        fprintf(stderr, "%s\n", dina_last_error());
        return 1;
    }
    DinaFit *fit = NULL;
    if (dina_fit(data, "dina", NULL, NULL, 1, &fit) != DINA_STATUS_OK) {
        fprintf(stderr, "%s\n", dina_last_error());
        return 1;
    }
    double beta[2];
    if (dina_fit_coefficients(fit) != 2 || dina_fit_coef(fit, beta, 2) != DINA_STATUS_OK) return 1;
    if (dina_fit(data, "nope", NULL, NULL, 1, &fit) != DINA_STATUS_PARSE || strlen(dina_last_error()) == 0) return 1;
    printf("%.6f %.6f\n", beta[0], beta[1]);
    dina_fit_free(fit);
    dina_dataset_free(data);
    return 0;
}
