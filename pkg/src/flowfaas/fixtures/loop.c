/* Never terminates on its own. */
int main(void) {
    volatile unsigned long n = 0;
    for (;;)
        n++;
}
