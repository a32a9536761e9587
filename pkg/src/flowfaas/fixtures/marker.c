/* Reports whether state from an earlier request is visible, then leaves a marker. */
#include "dndl_abi.h"

static volatile int marker;

int main(void) {
    dndl_input in;
    if (dndl_read_input(&in) != 0)
        return 2;
    const char *state = marker == 0x5eed ? "residue" : "clean";
    marker = 0x5eed;
    dndl_out_begin(1);
    dndl_out_set("State", 5, 1);
    dndl_out_item("state", 5, "", 0, state, strlen(state));
    return dndl_out_flush() == 0 ? 0 : 1;
}
