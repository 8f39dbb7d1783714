# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Semantics are defined by ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def depth_scores(sims, Py_ssize_t window):
    cdef const double[::1] s = np.ascontiguousarray(sims, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, lo, hi
    cdef double v, left, right
    for i in range(n):
        v = s[i]
        left = v
        lo = i - window
        if lo < 0:
            lo = 0
        for j in range(lo, i):
            if s[j] > left:
                left = s[j]
        right = v
        hi = i + window + 1
        if hi > n:
            hi = n
        for j in range(i + 1, hi):
            if s[j] > right:
                right = s[j]
        out[i] = (left - v) + (right - v)
    return out_arr


def greedy_select(depths, double threshold, Py_ssize_t min_gap, Py_ssize_t cap):
    cdef const double[::1] d = np.ascontiguousarray(depths, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0]
    cand_arr = np.flatnonzero(np.asarray(d) > threshold)
    # stable sort on -depth keeps lower index first among ties
    order = np.argsort(-np.asarray(d)[cand_arr], kind="stable")
    cdef const cnp.int64_t[::1] cand = np.ascontiguousarray(cand_arr[order], dtype=np.int64)
    kept_arr = np.empty(min(cap, cand.shape[0]) if cap > 0 else 0, dtype=np.int64)
    cdef cnp.int64_t[::1] kept = kept_arr
    cdef Py_ssize_t nk = 0, a, b, i, gap
    cdef bint ok
    for a in range(cand.shape[0]):
        if nk >= cap:
            break
        i = cand[a]
        ok = True
        for b in range(nk):
            gap = i - kept[b]
            if gap < 0:
                gap = -gap
            if gap < min_gap:
                ok = False
                break
        if ok:
            kept[nk] = i
            nk += 1
    return np.sort(kept_arr[:nk])


def segment_counts(codes, stops, Py_ssize_t C):
    cdef const cnp.int64_t[::1] c = np.ascontiguousarray(codes, dtype=np.int64)
    cdef const cnp.int64_t[::1] st = np.ascontiguousarray(stops, dtype=np.int64)
    out_arr = np.zeros((st.shape[0], C), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t k, i, start = 0
    cdef cnp.int64_t code
    for k in range(st.shape[0]):
        for i in range(start, st[k]):
            code = c[i]
            if code >= 0:
                out[k, code] += 1
        start = st[k]
    return out_arr
