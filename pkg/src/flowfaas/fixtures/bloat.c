/* Emits one 8 MiB item in set Out. */
#include "dndl_abi.h"

int main(void) {
    size_t n = 8u << 20;
    uint8_t *buf = calloc(n, 1);
    dndl_out_begin(1);
    dndl_out_set("Out", 3, 1);
    dndl_out_item("big", 3, "", 0, buf, n);
    return dndl_out_flush() == 0 ? 0 : 1;
}
