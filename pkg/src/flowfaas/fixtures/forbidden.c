/* Tries to open a network socket. */
#include <sys/socket.h>
#include "dndl_abi.h"

int main(void) {
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    const char *msg = fd >= 0 ? "socket opened" : "socket failed";
    dndl_out_begin(1);
    dndl_out_set("Out", 3, 1);
    dndl_out_item("out", 3, "", 0, msg, strlen(msg));
    return dndl_out_flush() == 0 ? 0 : 1;
}
