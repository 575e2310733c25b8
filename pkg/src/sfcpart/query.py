"""Exact point location and bucket-window k-nearest-neighbor search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import Dataset, InputError, atomic_write_lines
from .kdtree import KdTree, TreeParams, build_static_tree
from .sfc import MORTON, CurveOrder, _unit, order_points


@dataclass(frozen=True)
class KnnParams:
    k: int = 3
    cutoff: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise InputError("K must be >= 1")
        if self.cutoff < 0:
            raise InputError("cutoff must be >= 0")

    @staticmethod
    def cutoff_from_points(cutoff_points: int, bucket_size: int) -> int:
        """Convert a point-count window into a bucket-count window."""
        return max(0, -(-int(cutoff_points) // int(bucket_size)))


@dataclass(frozen=True)
class Location:
    found: bool
    id: int = -1
    bucket: int = -1


@dataclass(frozen=True)
class KnnResult:
    ids: tuple[int, ...]
    dists: tuple[float, ...]
    short: bool
    window: tuple[int, int]

    def __iter__(self):
        return iter(zip(self.ids, self.dists))

    def __len__(self):
        return len(self.ids)


@dataclass(eq=False)
class PointIndex:
    """Buckets in curve order with their quantized-key ranges.

    The key fast path is available when the curve is Morton over a regular
    decomposition, since then every bucket is a dyadic cell and the bucket
    key ranges are disjoint and ascending.
    """

    tree: KdTree
    order: CurveOrder
    key_lo: np.ndarray
    key_hi: np.ndarray
    fast_path: bool
    _bucket_of_leaf: dict[int, int] = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, tree: KdTree, order: CurveOrder | None = None) -> "PointIndex":
        order = order or order_points(tree, MORTON)
        keys = kernels.quantize_interleave(_unit(tree, tree.store.coords[order.rows]), tree.bits)
        off = order.bucket_offsets
        nb = order.num_buckets
        if nb:
            key_lo = np.minimum.reduceat(keys, off[:-1])
            key_hi = np.maximum.reduceat(keys, off[:-1])
        else:
            key_lo = key_hi = np.empty(0, dtype=np.uint64)
        fast = (order.curve == MORTON and tree.params.regular
                and bool(np.all(key_hi[:-1] < key_lo[1:])))
        idx = cls(tree, order, key_lo, key_hi, fast)
        idx._bucket_of_leaf = {id(leaf): b for b, leaf in enumerate(order.leaves)}
        return idx

    @classmethod
    def from_dataset(cls, ds: Dataset, params: TreeParams | None = None,
                     curve: str = MORTON) -> "PointIndex":
        tree = build_static_tree(ds, params)
        return cls.build(tree, order_points(tree, curve))

    @property
    def dim(self) -> int:
        return self.tree.dim

    def _check(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise InputError(f"query has {q.shape[0]} coordinates, index has {self.dim}")
        return q

    def _bucket_rows(self, b: int) -> np.ndarray:
        off = self.order.bucket_offsets
        return self.order.rows[off[b]:off[b + 1]]

    def _scan(self, b: int, q: np.ndarray) -> Location:
        rows = self._bucket_rows(b)
        hit = np.flatnonzero(np.all(self.tree.store.coords[rows] == q, axis=1))
        if hit.size == 0:
            return Location(False)
        return Location(True, int(self.tree.store.ids[rows[hit]].min()), b)

    def _key(self, q: np.ndarray) -> int:
        return int(kernels.quantize_interleave(_unit(self.tree, q.reshape(1, -1)), self.tree.bits)[0])

    def _key_bucket(self, q: np.ndarray) -> int:
        """Last bucket whose lowest key is <= the key of ``q`` (clamped to 0)."""
        k = np.uint64(self._key(q))
        return max(0, int(np.searchsorted(self.key_lo, k, side="right")) - 1)

    def _tree_bucket(self, q: np.ndarray) -> int | None:
        leaf, path = self.tree.descend(q)
        if leaf is not None:
            return self._bucket_of_leaf.get(id(leaf))
        return None

    def locate(self, q, path: str = "auto") -> Location:
        """Exact match on bit-identical coordinates.

        ``path`` is ``"fast"`` (key search), ``"tree"`` (hyperplane descent)
        or ``"auto"``.
        """
        q = self._check(q)
        if self.order.num_buckets == 0:
            return Location(False)
        if path == "auto":
            path = "fast" if self.fast_path else "tree"
        if path == "fast":
            if not self.fast_path:
                raise InputError("key fast path needs a Morton curve over a regular decomposition")
            box = self.tree.root.box
            if np.any(q < box.lo) or np.any(q > box.hi):
                return Location(False)
            k = np.uint64(self._key(q))
            b = int(np.searchsorted(self.key_lo, k, side="right")) - 1
            if b < 0 or k > self.key_hi[b]:
                return Location(False)
            return self._scan(b, q)
        if path != "tree":
            raise InputError(f"unknown path {path!r}")
        b = self._tree_bucket(q)
        return Location(False) if b is None else self._scan(b, q)

    def hit_bucket(self, q) -> int:
        """Bucket holding ``q`` or, failing that, the bucket whose key range would contain it."""
        q = self._check(q)
        b = None if self.fast_path else self._tree_bucket(q)
        return self._key_bucket(q) if b is None else b

    def window(self, b: int, cutoff: int) -> tuple[int, int]:
        return max(0, b - cutoff), min(self.order.num_buckets - 1, b + cutoff)

    def window_rows(self, lo: int, hi: int) -> np.ndarray:
        off = self.order.bucket_offsets
        return self.order.rows[off[lo]:off[hi + 1]]

    def knn(self, q, params: KnnParams) -> KnnResult:
        """Approximate k-NN: the K nearest among buckets within ``cutoff`` of the hit bucket."""
        q = self._check(q)
        if self.order.num_buckets == 0:
            return KnnResult((), (), True, (0, -1))
        lo, hi = self.window(self.hit_bucket(q), params.cutoff)
        rows = self.window_rows(lo, hi)
        d = np.sqrt(((self.tree.store.coords[rows] - q) ** 2).sum(axis=1))
        ids = self.tree.store.ids[rows]
        sel = np.lexsort((ids, d))[: params.k]
        return KnnResult(tuple(ids[sel].tolist()), tuple(d[sel].tolist()),
                         sel.shape[0] < params.k, (lo, hi))


def brute_force_knn(coords: np.ndarray, ids: np.ndarray, q, k: int):
    d = np.sqrt(((np.asarray(coords) - np.asarray(q)) ** 2).sum(axis=1))
    sel = np.lexsort((ids, d))[:k]
    return list(zip(np.asarray(ids)[sel].tolist(), d[sel].tolist()))


def knn_recall(idx: PointIndex, queries, params: KnnParams) -> float:
    """Fraction of windowed results that are also unrestricted nearest neighbors."""
    store = idx.tree.store
    live = np.flatnonzero(store.alive)
    coords, ids = store.coords[live], store.ids[live]
    hits = total = 0
    for q in np.asarray(queries, dtype=np.float64):
        got = set(idx.knn(q, params).ids)
        want = {i for i, _ in brute_force_knn(coords, ids, q, params.k)}
        hits += len(got & want)
        total += len(want)
    return hits / total if total else 1.0


# ---------------------------------------------------------------------------
# files


def read_queries(path, dim: int | None = None) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split()
            if not s or s[0].startswith("#"):
                continue
            if dim is not None and len(s) != dim:
                raise InputError(f"{path}:{lineno}: expected {dim} coordinates, got {len(s)}")
            try:
                rows.append([float(v) for v in s])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if rows and len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: queries differ in dimension")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1 if rows else (dim or 0))


def write_results(path, rows) -> None:
    """``rows`` of ``(query_index, id, distance)``."""
    atomic_write_lines(path, (f"{qi} {pid} {dist!r}" for qi, pid, dist in rows))


def read_results(path) -> list[tuple[int, int, float]]:
    out = []
    with open(path) as fh:
        for line in fh:
            s = line.split()
            if s:
                out.append((int(s[0]), int(s[1]), float(s[2])))
    return out
