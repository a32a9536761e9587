/* C = A x B over 64-bit integers (two's-complement wraparound).
 * Matrix payload: rows:u32 | cols:u32 | rows*cols little-endian int64, row-major. */
#include "dndl_abi.h"

static int load(const dndl_set *set, uint32_t *r, uint32_t *c, const uint8_t **vals) {
    if (!set || set->n_items != 1 || set->items[0].data_len < 8)
        return -1;
    const uint8_t *p = set->items[0].data;
    *r = dndl_u32(p);
    *c = dndl_u32(p + 4);
    if (set->items[0].data_len != 8 + 8ull * *r * *c)
        return -1;
    *vals = p + 8;
    return 0;
}

int main(void) {
    dndl_input in;
    uint32_t ar, ac, br, bc;
    const uint8_t *av, *bv;
    if (dndl_read_input(&in) != 0 || load(dndl_find(&in, "A"), &ar, &ac, &av) != 0 ||
        load(dndl_find(&in, "B"), &br, &bc, &bv) != 0) {
        dndl_err("matmul: expected one matrix item in each of sets A and B\n");
        return 2;
    }
    if (ac != br) {
        dndl_err("matmul: dimension mismatch\n");
        return 3;
    }
    uint64_t *a = malloc(8ull * ar * ac + 8), *b = malloc(8ull * br * bc + 8);
    uint64_t *c = calloc((size_t)ar * bc + 1, 8);
    for (uint64_t i = 0; i < (uint64_t)ar * ac; i++) a[i] = dndl_u64(av + 8 * i);
    for (uint64_t i = 0; i < (uint64_t)br * bc; i++) b[i] = dndl_u64(bv + 8 * i);
    for (uint32_t i = 0; i < ar; i++)
        for (uint32_t k = 0; k < ac; k++) {
            uint64_t aik = a[(uint64_t)i * ac + k];
            for (uint32_t j = 0; j < bc; j++)
                c[(uint64_t)i * bc + j] += aik * b[(uint64_t)k * bc + j];
        }
    uint64_t n = (uint64_t)ar * bc;
    uint8_t *out = malloc(8 + 8 * n);
    uint32_t dims[2] = {ar, bc};
    for (int d = 0; d < 2; d++)
        for (int q = 0; q < 4; q++) out[4 * d + q] = (uint8_t)(dims[d] >> (8 * q));
    for (uint64_t i = 0; i < n; i++)
        for (int q = 0; q < 8; q++) out[8 + 8 * i + q] = (uint8_t)(c[i] >> (8 * q));
    dndl_out_begin(1);
    dndl_out_set("C", 1, 1);
    dndl_out_item("C", 1, "", 0, out, 8 + 8 * n);
    return dndl_out_flush() == 0 ? 0 : 1;
}
