"""Pure numpy implementations of the hot kernels.

Each function has an identical twin in ``_kernels.pyx``; results must match
bit for bit.
"""

from bisect import bisect_left, bisect_right

import numpy as np

KEY_WIDTH = 64


def quantize_interleave(coords, bits):
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    n, d = coords.shape
    if d * bits > KEY_WIDTH:
        raise ValueError(f"{d} dims x {bits} bits exceeds {KEY_WIDTH}-bit key")
    side = np.uint64(1) << np.uint64(bits)
    q = np.floor(coords * float(side))
    np.clip(q, 0, float(side - np.uint64(1)), out=q)
    q = q.astype(np.uint64)
    key = np.zeros(n, dtype=np.uint64)
    one = np.uint64(1)
    for b in range(bits - 1, -1, -1):
        sb = np.uint64(b)
        for k in range(d):
            key = (key << one) | ((q[:, k] >> sb) & one)
    return key


def range_bbox(coords, order, start, stop):
    sub = coords[order[start:stop]]
    return sub.min(axis=0), sub.max(axis=0)


def partition_range(coords, order, start, stop, dim, value):
    """Stable in-place partition of ``order[start:stop]`` by ``coords[:, dim] <= value``."""
    seg = order[start:stop]
    mask = coords[seg, dim] <= value
    left = seg[mask]
    right = seg[~mask]
    mid = start + left.shape[0]
    order[start:mid] = left
    order[mid:stop] = right
    return mid


def knapsack_floor(weights, nparts, integral):
    """Rank of each element: ``min(P-1, floor(prefix * P / total))``."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    ranks = np.empty(n, dtype=np.int64)
    if integral:
        iw = w.astype(np.int64)
        excl = np.zeros(n, dtype=np.int64)
        np.cumsum(iw[:-1], out=excl[1:])
        total = int(iw.sum())
        ranks[:] = (excl * nparts) // total
    else:
        acc = np.cumsum(w)
        excl = np.zeros(n)
        excl[1:] = acc[:-1]
        total = float(acc[-1])
        ranks[:] = np.floor(excl * nparts / total)
    np.minimum(ranks, nparts - 1, out=ranks)
    return ranks


def window_reach(prefix, nparts, lower, width, eps):
    """Reachable cut-index intervals when every part load lies in [lower, lower+width].

    Returns ``(lo, hi, ok)``; ``lo[k]``/``hi[k]`` bound the index of cut ``k``.
    """
    pre = prefix.tolist() if hasattr(prefix, "tolist") else list(prefix)
    n = len(pre) - 1
    lo = [0] * nparts
    hi = [0] * nparts
    for k in range(1, nparts):
        a = bisect_left(pre, pre[lo[k - 1]] + lower - eps)
        b = bisect_right(pre, pre[hi[k - 1]] + lower + width + eps) - 1
        if a > n:
            return np.array(lo), np.array(hi), False
        lo[k] = a
        hi[k] = max(b, a)
    total = pre[n]
    ok = pre[lo[nparts - 1]] <= total - lower + eps
    return np.array(lo, dtype=np.int64), np.array(hi, dtype=np.int64), ok
