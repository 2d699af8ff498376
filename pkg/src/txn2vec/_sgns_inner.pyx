# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SGD kernel for skip-gram negative sampling.

Mirrors ``_sgns_pure.py`` update for update (same counter-based splitmix64
negative draws, same clamping and loss accounting); only floating-point
rounding differs.  Runs without the GIL so multiple worker threads can
share the embedding matrices lock-free.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p
from libc.stdlib cimport free, malloc

cnp.import_array()

KERNEL_NAME = "cython"

ctypedef cnp.float32_t REAL_t
ctypedef cnp.int32_t INT_t
ctypedef unsigned long long u64

cdef double _LR_FLOOR = 1e-4
cdef int _MAX_REDRAWS = 10
cdef u64 _GAMMA = 0x9E3779B97F4A7C15ULL
cdef u64 _MIX1 = 0xBF58476D1CE4E5B9ULL
cdef u64 _MIX2 = 0x94D049BB133111EBULL
cdef double _INV_2_53 = 1.0 / 9007199254740992.0


cdef inline u64 mix64(u64 z) noexcept nogil:
    z = (z ^ (z >> 30)) * _MIX1
    z = (z ^ (z >> 27)) * _MIX2
    return z ^ (z >> 31)


cdef inline double draw_unit(u64 seed, u64 counter) noexcept nogil:
    return <double>(mix64(seed + (counter + 1) * _GAMMA) >> 11) * _INV_2_53


cdef inline double softplus(double x) noexcept nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline long search_cum(const double* cum, long n, double r) noexcept nogil:
    # first index with cum[i] > r (bisect_right); cum[n-1] == 1.0 > r always
    cdef long lo = 0
    cdef long hi = n
    cdef long mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum[mid] <= r:
            lo = mid + 1
        else:
            hi = mid
    if lo >= n:
        lo = n - 1
    return lo


cdef inline bint has_edge(const INT_t* indptr, const INT_t* indices, long a, long b) noexcept nogil:
    cdef long lo = indptr[a]
    cdef long hi = indptr[a + 1]
    cdef long mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if indices[mid] < b:
            lo = mid + 1
        else:
            hi = mid
    return lo < indptr[a + 1] and indices[lo] == b


def train_chunk(REAL_t[:, ::1] inp, REAL_t[:, ::1] ctx,
                INT_t[::1] pa, INT_t[::1] pb,
                long start_visit, long end_visit, long total_updates,
                double lr0, int k,
                double[::1] cum, INT_t[::1] indptr, INT_t[::1] indices,
                u64 seed):
    """Run SGD over pair visits [start_visit, end_visit).

    Visit v trains pair v mod n_pairs in both orderings (two updates with
    fresh negatives each).  Returns (loss_sum, n_updates, escape_count).
    """
    cdef long n_pairs = pa.shape[0]
    cdef long n_entities = cum.shape[0]
    cdef int d = inp.shape[1]
    cdef double loss_sum = 0.0
    cdef long escapes = 0
    cdef long n_updates = 0
    cdef long v, p, g, center, positive, cand, row
    cdef int order, slot, attempt, j, i
    cdef bint accepted
    cdef double lr, frac, r, dot, x, sig
    cdef REAL_t c32
    cdef long* rows = <long*> malloc((k + 1) * sizeof(long))
    cdef double* coef = <double*> malloc((k + 1) * sizeof(double))
    cdef double* work = <double*> malloc(d * sizeof(double))
    if rows == NULL or coef == NULL or work == NULL:
        free(rows)
        free(coef)
        free(work)
        raise MemoryError("kernel scratch allocation failed")
    try:
        with nogil:
            for v in range(start_visit, end_visit):
                p = v % n_pairs
                for order in range(2):
                    if order == 0:
                        center = pa[p]
                        positive = pb[p]
                    else:
                        center = pb[p]
                        positive = pa[p]
                    g = 2 * v + order
                    frac = 1.0 - (<double>g) / (<double>total_updates)
                    lr = lr0 * (frac if frac > _LR_FLOOR else _LR_FLOOR)

                    rows[0] = positive
                    for slot in range(k):
                        cand = center
                        accepted = False
                        for attempt in range(_MAX_REDRAWS + 1):
                            r = draw_unit(seed, ((<u64>g) << 10) + ((<u64>slot) << 4) + <u64>attempt)
                            cand = search_cum(&cum[0], n_entities, r)
                            if cand != center and cand != positive and not has_edge(&indptr[0], &indices[0], center, cand):
                                accepted = True
                                break
                        if not accepted:
                            escapes += 1
                        rows[slot + 1] = cand

                    # pass 1: dots, coefficients and the center-row gradient,
                    # all read against pre-update values
                    for i in range(d):
                        work[i] = 0.0
                    for j in range(k + 1):
                        row = rows[j]
                        dot = 0.0
                        for i in range(d):
                            dot += (<double>inp[center, i]) * (<double>ctx[row, i])
                        x = dot
                        if x > 700.0:
                            x = 700.0
                        elif x < -700.0:
                            x = -700.0
                        sig = 1.0 / (1.0 + exp(-x))
                        if j == 0:
                            coef[j] = lr * (1.0 - sig)
                            loss_sum += softplus(-dot)
                        else:
                            coef[j] = lr * (0.0 - sig)
                            loss_sum += softplus(dot)
                        for i in range(d):
                            work[i] += coef[j] * (<double>ctx[row, i])

                    # pass 2: context rows (center row still unmodified)
                    for j in range(k + 1):
                        row = rows[j]
                        c32 = <REAL_t>coef[j]
                        for i in range(d):
                            ctx[row, i] += c32 * inp[center, i]

                    # pass 3: center row
                    for i in range(d):
                        inp[center, i] += <REAL_t>work[i]
                    n_updates += 1
    finally:
        free(rows)
        free(coef)
        free(work)
    return loss_sum, n_updates, escapes
