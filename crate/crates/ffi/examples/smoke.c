/* Minimal C client: builds the two-state chain and checks a few values. */
#include <math.h>
#include <stdio.h>

#include "mdpsim.h"

int main(void) {
    const double states[2] = {1.0, 2.0};
    const double generator[4] = {-1.0, 1.0, 1.0, -1.0};
    const double drift[2] = {1.0, 0.0};
    MdpsimChain *chain = NULL;
    if (mdpsim_chain_new(states, generator, drift, 2, &chain) != MDPSIM_STATUS_OK) {
        fprintf(stderr, "chain: %s\n", mdpsim_last_error());
        return 1;
    }
    double b = 0.0, a = 0.0;
    mdpsim_chain_homogenize(chain, &b, &a);
    printf("b_eff=%.17g a_eff=%.17g\n", b, a);

    const double bad[4] = {-1.0, 1.0, 1.0, -2.0};
    MdpsimChain *rejected = NULL;
    MdpsimStatus status = mdpsim_chain_new(states, bad, drift, 2, &rejected);
    printf("bad generator: status=%d message=%s\n", (int)status, mdpsim_last_error());

    MdpsimSimParams params = {0.1, 0.1, 0.0, 1.0, 0.01, 7};
    double path[101];
    size_t len = 101;
    status = mdpsim_simulate(chain, &params, MDPSIM_SCHEME_EULER, true, 3, path, &len);
    printf("simulate: status=%d len=%zu x_T=%.6f\n", (int)status, len, path[len - 1]);
    mdpsim_chain_free(chain);

    int ok = fabs(b - 0.8) < 1e-12 && fabs(a - 1.6) < 1e-12 && rejected == NULL &&
             status == MDPSIM_STATUS_OK && len == 101;
    return ok ? 0 : 1;
}
