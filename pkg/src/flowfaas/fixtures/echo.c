/* Re-emit every input set and item unchanged. */
#include "dndl_abi.h"

int main(void) {
    dndl_input in;
    if (dndl_read_input(&in) != 0) {
        dndl_err("echo: malformed input\n");
        return 2;
    }
    dndl_out_begin(in.n_sets);
    for (uint32_t s = 0; s < in.n_sets; s++) {
        const dndl_set *set = &in.sets[s];
        dndl_out_set(set->name, set->name_len, set->n_items);
        for (uint32_t i = 0; i < set->n_items; i++) {
            const dndl_item *it = &set->items[i];
            dndl_out_item(it->ident, it->ident_len, it->key, it->key_len, it->data, it->data_len);
        }
    }
    return dndl_out_flush() == 0 ? 0 : 1;
}
