/* Minimal reader/writer for the DNDL set/item stream on stdin/stdout. */
#ifndef DNDL_ABI_H
#define DNDL_ABI_H

#include <stdint.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

typedef struct {
    const char *ident;
    uint32_t ident_len;
    const uint8_t *key;
    uint32_t key_len;
    const uint8_t *data;
    uint64_t data_len;
} dndl_item;

typedef struct {
    const char *name;
    uint32_t name_len;
    uint32_t n_items;
    dndl_item *items;
} dndl_set;

typedef struct {
    uint32_t n_sets;
    dndl_set *sets;
} dndl_input;

static uint8_t *dndl_out;
static size_t dndl_out_len, dndl_out_cap;

static inline uint32_t dndl_u32(const uint8_t *p) {
    return (uint32_t)p[0] | (uint32_t)p[1] << 8 | (uint32_t)p[2] << 16 | (uint32_t)p[3] << 24;
}

static inline uint64_t dndl_u64(const uint8_t *p) {
    return (uint64_t)dndl_u32(p) | (uint64_t)dndl_u32(p + 4) << 32;
}

/* Read all of stdin and index it. Returns 0 on success. */
static inline int dndl_read_input(dndl_input *in) {
    size_t cap = 1 << 16, len = 0;
    uint8_t *buf = malloc(cap);
    for (;;) {
        if (len == cap) {
            cap *= 2;
            buf = realloc(buf, cap);
        }
        ssize_t n = read(0, buf + len, cap - len);
        if (n < 0)
            return -1;
        if (n == 0)
            break;
        len += (size_t)n;
    }
    size_t pos = 12;
    if (len < 12 || memcmp(buf, "DNDL", 4) != 0 || dndl_u32(buf + 4) != 1)
        return -1;
    in->n_sets = dndl_u32(buf + 8);
    in->sets = calloc(in->n_sets ? in->n_sets : 1, sizeof(dndl_set));
    for (uint32_t s = 0; s < in->n_sets; s++) {
        dndl_set *set = &in->sets[s];
        if (pos + 4 > len) return -1;
        set->name_len = dndl_u32(buf + pos); pos += 4;
        if (pos + set->name_len + 4 > len) return -1;
        set->name = (const char *)buf + pos; pos += set->name_len;
        set->n_items = dndl_u32(buf + pos); pos += 4;
        set->items = calloc(set->n_items ? set->n_items : 1, sizeof(dndl_item));
        for (uint32_t i = 0; i < set->n_items; i++) {
            dndl_item *it = &set->items[i];
            if (pos + 4 > len) return -1;
            it->ident_len = dndl_u32(buf + pos); pos += 4;
            if (pos + it->ident_len + 4 > len) return -1;
            it->ident = (const char *)buf + pos; pos += it->ident_len;
            it->key_len = dndl_u32(buf + pos); pos += 4;
            if (pos + it->key_len + 8 > len) return -1;
            it->key = buf + pos; pos += it->key_len;
            it->data_len = dndl_u64(buf + pos); pos += 8;
            if (pos + it->data_len > len) return -1;
            it->data = buf + pos; pos += it->data_len;
        }
    }
    return pos == len ? 0 : -1;
}

static inline const dndl_set *dndl_find(const dndl_input *in, const char *name) {
    size_t n = strlen(name);
    for (uint32_t s = 0; s < in->n_sets; s++)
        if (in->sets[s].name_len == n && memcmp(in->sets[s].name, name, n) == 0)
            return &in->sets[s];
    return NULL;
}

static inline void dndl_put(const void *p, size_t n) {
    if (dndl_out_len + n > dndl_out_cap) {
        size_t cap = dndl_out_cap ? dndl_out_cap : 4096;
        while (cap < dndl_out_len + n)
            cap *= 2;
        dndl_out = realloc(dndl_out, cap);
        dndl_out_cap = cap;
    }
    memcpy(dndl_out + dndl_out_len, p, n);
    dndl_out_len += n;
}

static inline void dndl_put_u32(uint32_t v) {
    uint8_t b[4] = {(uint8_t)v, (uint8_t)(v >> 8), (uint8_t)(v >> 16), (uint8_t)(v >> 24)};
    dndl_put(b, 4);
}

static inline void dndl_put_u64(uint64_t v) {
    dndl_put_u32((uint32_t)v);
    dndl_put_u32((uint32_t)(v >> 32));
}

static inline void dndl_out_begin(uint32_t n_sets) {
    dndl_put("DNDL", 4);
    dndl_put_u32(1);
    dndl_put_u32(n_sets);
}

static inline void dndl_out_set(const char *name, uint32_t len, uint32_t n_items) {
    dndl_put_u32(len);
    dndl_put(name, len);
    dndl_put_u32(n_items);
}

static inline void dndl_out_item(const char *ident, uint32_t ident_len, const void *key,
                          uint32_t key_len, const void *data, uint64_t data_len) {
    dndl_put_u32(ident_len);
    dndl_put(ident, ident_len);
    dndl_put_u32(key_len);
    dndl_put(key, key_len);
    dndl_put_u64(data_len);
    dndl_put(data, (size_t)data_len);
}

static inline int dndl_out_flush(void) {
    size_t off = 0;
    while (off < dndl_out_len) {
        ssize_t n = write(1, dndl_out + off, dndl_out_len - off);
        if (n <= 0)
            return -1;
        off += (size_t)n;
    }
    return 0;
}

static inline void dndl_err(const char *msg) {
    ssize_t r = write(2, msg, strlen(msg));
    (void)r;
}

#endif
