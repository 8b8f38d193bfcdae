#include <stdio.h>
#include <string.h>
#include "streamkey.h"

#define CHECK(x) do { if ((x) != SK_STATUS_OK) { fprintf(stderr, "%s: %s\n", #x, sk_last_error()); return 1; } } while (0)

int main(void) {
    double rate = 0.0;
    CHECK(sk_shor_preskill_rate(0.0, 0.0, &rate));
    if (rate != 1.0) return 2;

    SkToeplitz *m = NULL;
    CHECK(sk_toeplitz_generate(8, 32, 7, &m));
    uint8_t seed[1] = {0x5a};
    SkStreamPad *pad = NULL;
    CHECK(sk_pad_new(m, seed, &pad));

    uint8_t zeros[4] = {0};
    uint8_t padbits[4];
    CHECK(sk_pad_finalize(pad, zeros, 32, padbits, sizeof padbits));
    if (sk_pad_finalize(pad, zeros, 1, padbits, sizeof padbits) != SK_STATUS_PAD_OVER_CONSUMED) return 3;

    SkLedger *ledger = NULL;
    uint64_t max = 0, used = 0;
    CHECK(sk_ledger_new(&ledger));
    CHECK(sk_ledger_register(ledger, "m", 0.25, 0.5, &max));
    if (max != 2) return 4;
    CHECK(sk_ledger_draw(ledger, "m", &used));
    CHECK(sk_ledger_draw(ledger, "m", &used));
    if (sk_ledger_draw(ledger, "m", &used) != SK_STATUS_BUDGET_EXHAUSTED) return 5;

    sk_ledger_free(ledger);
    sk_pad_free(pad);
    sk_toeplitz_free(m);
    printf("ok %s\n", sk_version());
    return 0;
}
