/* Exits with status 3 after a diagnostic on stderr. */
#include "dndl_abi.h"

int main(void) {
    dndl_err("fail: deliberate failure\n");
    return 3;
}
