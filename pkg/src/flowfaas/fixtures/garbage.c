/* Writes bytes that are not a DNDL stream. */
#include "dndl_abi.h"

int main(void) {
    ssize_t r = write(1, "this is not a set stream", 24);
    return r == 24 ? 0 : 1;
}
