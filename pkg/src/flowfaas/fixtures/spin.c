/* Busy-waits for the number of milliseconds given in set Duration. */
#include <time.h>
#include "dndl_abi.h"

static double now_ms(void) {
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return ts.tv_sec * 1e3 + ts.tv_nsec / 1e6;
}

int main(void) {
    dndl_input in;
    if (dndl_read_input(&in) != 0)
        return 2;
    const dndl_set *d = dndl_find(&in, "Duration");
    long ms = 0;
    if (d && d->n_items > 0)
        for (uint64_t i = 0; i < d->items[0].data_len; i++) {
            uint8_t ch = d->items[0].data[i];
            if (ch < '0' || ch > '9') break;
            ms = ms * 10 + (ch - '0');
        }
    double end = now_ms() + (double)ms;
    volatile uint64_t spins = 0;
    while (now_ms() < end)
        spins++;
    dndl_out_begin(1);
    dndl_out_set("Done", 4, 1);
    dndl_out_item("done", 4, "", 0, "ok", 2);
    return dndl_out_flush() == 0 ? 0 : 1;
}
