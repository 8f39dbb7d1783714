"""Pure-Python kernels; reference semantics for the compiled ``_kernels`` module.

Both implementations must agree bit-for-bit, so the arithmetic here is kept
to the same operation order as the Cython source.
"""

from __future__ import annotations

import numpy as np


def depth_scores(sims, window):
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    n = sims.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        s = sims[i]
        left = s
        for j in range(max(0, i - window), i):
            if sims[j] > left:
                left = sims[j]
        right = s
        for j in range(i + 1, min(n, i + window + 1)):
            if sims[j] > right:
                right = sims[j]
        out[i] = (left - s) + (right - s)
    return out


def greedy_select(depths, threshold, min_gap, cap):
    """Indices kept by the spacing-constrained greedy pass, ascending.

    Candidates (depth strictly above ``threshold``) are visited deepest first,
    ties by lower index; at most ``cap`` are kept.
    """
    depths = np.ascontiguousarray(depths, dtype=np.float64)
    cand = [i for i in range(depths.shape[0]) if depths[i] > threshold]
    cand.sort(key=lambda i: (-depths[i], i))
    kept = []
    for i in cand:
        if len(kept) >= cap:
            break
        ok = True
        for b in kept:
            if abs(i - b) < min_gap:
                ok = False
                break
        if ok:
            kept.append(i)
    kept.sort()
    return np.asarray(kept, dtype=np.int64)


def segment_counts(codes, stops, C):
    """Label counts per segment; ``stops`` are exclusive segment ends.

    Codes of -1 (excluded unlabeled utterances) are not counted.
    """
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    stops = np.ascontiguousarray(stops, dtype=np.int64)
    out = np.zeros((stops.shape[0], C), dtype=np.int64)
    start = 0
    for k in range(stops.shape[0]):
        for i in range(start, stops[k]):
            c = codes[i]
            if c >= 0:
                out[k, c] += 1
        start = stops[k]
    return out
