"""Space-filling-curve keys and traversal orders over a kd-tree.

Keys are path bit strings: one character per tree level, ``'0'`` for the
first-visited child and ``'1'`` for the second. Python string comparison gives
exactly the curve order (a prefix sorts before its extensions).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import InputError, atomic_write_lines
from .kdtree import KdNode, KdTree

MORTON = "morton"
HILBERT = "hilbert"
CURVES = (MORTON, HILBERT)

_QUANT_TOL = 1e-12


def quantize_key(coords, bits: int):
    """Bit-interleaved key of unit-cube coordinates.

    Each coordinate is quantized to ``floor(c * 2**bits)`` (clamped), then bits
    are interleaved from the most significant quantized bit downward with
    dimension 0 leading each group. Accepts one point or an ``(n, d)`` array.
    """
    c = np.asarray(coords, dtype=np.float64)
    single = c.ndim == 1
    c2 = c.reshape(1, -1) if single else c
    if bits < 1:
        raise InputError("bits must be >= 1")
    if np.any(c2 < -_QUANT_TOL) or np.any(c2 > 1 + _QUANT_TOL):
        raise InputError("coordinates outside the unit cube")
    keys = kernels.quantize_interleave(c2, bits)
    return int(keys[0]) if single else keys


# ---------------------------------------------------------------------------
# Hilbert-like rule table

# A 2D frame maps local quadrant bits (u, v) to global bits (x, y); stored as a
# 4-tuple indexed by 2*u + v.
_IDENT = ((0, 0), (0, 1), (1, 0), (1, 1))
_TRANSPOSE = ((0, 0), (1, 0), (0, 1), (1, 1))
_ANTI = ((1, 1), (0, 1), (1, 0), (0, 0))
_BASE_ORDER = ((0, 0), (0, 1), (1, 1), (1, 0))
_BASE_SUB = (_TRANSPOSE, _IDENT, _IDENT, _ANTI)


def _apply(frame, q):
    return frame[2 * q[0] + q[1]]


def _compose(outer, inner):
    return tuple(_apply(outer, _apply(inner, (u, v))) for u in (0, 1) for v in (0, 1))


@dataclass(frozen=True)
class RuleTable:
    """Visit rules for the Hilbert-like traversal in ``dim`` dimensions.

    ``steps[s][k]`` is ``((gx, gy), next_state)``: the quadrant visited at step
    ``k`` from state ``s`` (bits along the lower/higher dimension of the active
    pair) and the state handed to it. Dimensions pair up as (0,1), (2,3), ...;
    a trailing unpaired dimension is always visited lower-then-upper.
    """

    dim: int
    steps: tuple = field(repr=False)

    @property
    def num_states(self) -> int:
        return len(self.steps)

    def partner(self, axis: int) -> int | None:
        p = axis ^ 1
        return p if p < self.dim else None

    def entry(self, state: int):
        return self.steps[state][0][0]

    def exit(self, state: int):
        return self.steps[state][3][0]

    def visit_order(self, state: int, axis: int, at_start: bool = False) -> tuple[int, int]:
        """Child visit order (0 = lower) for a single split along ``axis``."""
        p = self.partner(axis)
        if p is None:
            return (0, 1)
        idx = 0 if axis < p else 1
        e = self.entry(state)[idx]
        x = self.exit(state)[idx]
        if e != x:
            first = e
        else:
            # entry and exit on the same side: only one of them can be kept
            # adjacent, and at the very start of the curve there is no entry
            first = 1 - x if at_start else e
        return (first, 1 - first)


def build_rule_table(d: int) -> RuleTable:
    if d < 1:
        raise InputError("dimension must be >= 1")
    if d == 1:
        return RuleTable(1, (tuple(((0, 0), 0) for _ in range(4)),))
    frames = [_IDENT]
    index = {_IDENT: 0}
    rows: list = []
    i = 0
    while i < len(frames):
        f = frames[i]
        row = []
        for k in range(4):
            quad = _apply(f, _BASE_ORDER[k])
            nxt = _compose(f, _BASE_SUB[k])
            if nxt not in index:
                index[nxt] = len(frames)
                frames.append(nxt)
            row.append((quad, index[nxt]))
        rows.append(tuple(row))
        i += 1
    return RuleTable(d, tuple(rows))


# ---------------------------------------------------------------------------
# traversal


@dataclass(eq=False)
class CurveOrder:
    curve: str
    permutation: np.ndarray        # point ids in curve order
    rows: np.ndarray               # store rows in curve order
    bucket_keys: list[str]
    bucket_offsets: np.ndarray     # bucket b covers positions [off[b], off[b+1])
    leaves: list[KdNode] = field(repr=False)

    @property
    def num_buckets(self) -> int:
        return len(self.bucket_keys)

    @property
    def keys(self) -> list[str]:
        """Per-position key (the key of the bucket holding that point)."""
        counts = np.diff(self.bucket_offsets)
        return [k for k, c in zip(self.bucket_keys, counts.tolist()) for _ in range(c)]

    def bucket_of_position(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_buckets), np.diff(self.bucket_offsets))


def order_points(tree: KdTree, curve: str = MORTON) -> CurveOrder:
    """Depth-first curve traversal; points inside a bucket sort by quantized key, then id."""
    if curve not in CURVES:
        raise InputError(f"unknown curve {curve!r}")
    if tree.root is None:
        raise InputError("tree not built")
    if curve == MORTON:
        visited = _morton_leaves(tree.root)
    else:
        visited = _hilbert_leaves(tree.root, build_rule_table(tree.dim))

    leaves = [n for n, _ in visited]
    keys = [k for _, k in visited]
    sizes = np.array([n.bucket.size for n in leaves], dtype=np.int64)
    offsets = np.zeros(len(leaves) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    rows = (np.concatenate([n.bucket.rows for n in leaves]) if leaves
            else np.empty(0, dtype=np.int64))

    store = tree.store
    qk = kernels.quantize_interleave(_unit(tree, store.coords[rows]), tree.bits)
    bidx = np.repeat(np.arange(len(leaves)), sizes)
    ids = store.ids[rows]
    perm = np.lexsort((ids, qk, bidx))
    rows = rows[perm]
    return CurveOrder(curve, store.ids[rows], rows, keys, offsets, leaves)


def _unit(tree: KdTree, coords: np.ndarray) -> np.ndarray:
    box = tree.root.box
    if box is None:
        return np.clip(coords, 0.0, 1.0)
    w = box.widths
    out = (coords - box.lo) / np.where(w == 0, 1.0, w)
    return np.clip(out, 0.0, 1.0)


def _morton_leaves(root: KdNode):
    out = []
    stack = [(root, "")]
    while stack:
        node, key = stack.pop()
        if node.is_leaf:
            if node.bucket.size:
                out.append((node, key))
            continue
        if node.right is not None:
            stack.append((node.right, key + "1"))
        if node.left is not None:
            stack.append((node.left, key + "0"))
    return out


def _hilbert_leaves(root: KdNode, table: RuleTable):
    out = []
    stack = [(root, "", 0, True)]
    while stack:
        node, key, state, at_start = stack.pop()
        if node.is_leaf:
            if node.bucket.size:
                out.append((node, key))
            continue
        nxt = _hilbert_step(node, key, state, at_start, table)
        stack.extend(reversed(nxt))
    return out


def _hilbert_step(node: KdNode, key: str, state: int, at_start: bool, table: RuleTable):
    a = node.split_dim
    p = table.partner(a)
    lo_kid, hi_kid = node.left, node.right
    seq = []
    if (p is not None and lo_kid is not None and hi_kid is not None
            and not lo_kid.is_leaf and not hi_kid.is_leaf
            and lo_kid.split_dim == p and hi_kid.split_dim == p):
        # look-ahead: treat the four grandchildren as one 2D cell
        a_first = a < p
        for step, (quad, nstate) in enumerate(table.steps[state]):
            ga, gp = (quad[0], quad[1]) if a_first else (quad[1], quad[0])
            child = lo_kid if ga == 0 else hi_kid
            gc = child.left if gp == 0 else child.right
            if gc is None:
                continue
            seq.append((gc, key + format(step, "02b"), nstate, at_start and not seq))
        return seq
    first, second = table.visit_order(state, a, at_start)
    kids = (lo_kid, hi_kid)
    for bit, side in enumerate((first, second)):
        child = kids[side]
        if child is None:
            continue
        seq.append((child, key + str(bit), state, at_start and not seq))
    return seq


def write_permutation(path, order: CurveOrder) -> None:
    atomic_write_lines(path, (str(i) for i in order.permutation.tolist()))


def read_permutation(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([int(s) for s in fh.read().split()], dtype=np.int64)
