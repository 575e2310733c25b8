"""Weighted kd-tree with bucketed leaves.

The static build runs in three phases: breadth-first expansion of the top
``k1`` nodes, breadth-first expansion of each top node into ``k2`` sub-top
nodes, then depth-first completion of every sub-top sub-tree. Sub-trees in the
last phase own disjoint slices of the shared index vector, so they can be built
by a thread pool without coordination beyond the node registry.
"""

from __future__ import annotations

import enum
import itertools
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import BoundingBox, Dataset, InputError


class SplitterKind(enum.Enum):
    MIDPOINT = "midpoint"
    MEDIAN_EXACT = "median"
    MEDIAN_SAMPLE = "median-sample"
    MEDIAN_SELECT = "median-select"


@dataclass(frozen=True)
class SplitterStrategy:
    kind: SplitterKind = SplitterKind.MIDPOINT
    sample_size: int = 1024

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", SplitterKind(self.kind))
        if self.sample_size < 1:
            raise InputError("sample_size must be >= 1")

    @property
    def randomized(self) -> bool:
        return self.kind in (SplitterKind.MEDIAN_SAMPLE, SplitterKind.MEDIAN_SELECT)


@dataclass(frozen=True)
class TreeParams:
    """Build parameters.

    ``regular`` switches to a uniform decomposition: split dimensions cycle in
    a fixed order and every split sits at the midpoint of the node's dyadic
    cell, which is what the Morton point-location fast path needs.
    """

    bucket_size: int = 32
    splitter: SplitterStrategy = field(default_factory=SplitterStrategy)
    k1: int = 2
    k2: int = 2
    workers: int = 1
    seed: int = 0
    regular: bool = False
    bits: int | None = None

    def __post_init__(self):
        if self.bucket_size < 1:
            raise InputError("bucket_size must be >= 1")
        if self.k1 < 1 or self.k2 < 1:
            raise InputError("k1 and k2 must be >= 1")
        if self.workers < 1:
            raise InputError("workers must be >= 1")


def default_bits(d: int) -> int:
    return max(1, min(16, 62 // d))


class PointStore:
    """Growable row storage for ids, weights and coordinates."""

    def __init__(self, ids, weights, coords):
        n, d = coords.shape
        cap = max(16, n)
        self.dim = d
        self._ids = np.empty(cap, dtype=np.int64)
        self._weights = np.empty(cap, dtype=np.float64)
        self._coords = np.empty((cap, d), dtype=np.float64)
        self._alive = np.zeros(cap, dtype=bool)
        self._ids[:n] = ids
        self._weights[:n] = weights
        self._coords[:n] = coords
        self._alive[:n] = True
        self.n = n
        self._row_of: dict[int, int] | None = None

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "PointStore":
        return cls(ds.ids, ds.weights, ds.coords)

    @property
    def ids(self):
        return self._ids[: self.n]

    @property
    def weights(self):
        return self._weights[: self.n]

    @property
    def coords(self):
        return self._coords[: self.n]

    @property
    def alive(self):
        return self._alive[: self.n]

    @property
    def row_of(self) -> dict[int, int]:
        if self._row_of is None:
            live = np.flatnonzero(self.alive)
            self._row_of = dict(zip(self._ids[live].tolist(), live.tolist()))
        return self._row_of

    def add(self, pid: int, weight: float, coords) -> int:
        if pid in self.row_of:
            raise InputError(f"id {pid} already present")
        if self.n == self._ids.shape[0]:
            self._grow()
        r = self.n
        self._ids[r] = pid
        self._weights[r] = weight
        self._coords[r] = coords
        self._alive[r] = True
        self.n += 1
        self.row_of[pid] = r
        return r

    def remove(self, pid: int) -> int:
        r = self.row_of.pop(pid)
        self._alive[r] = False
        return r

    def _grow(self):
        cap = 2 * self._ids.shape[0]
        for name in ("_ids", "_weights", "_alive"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)
        new = np.empty((cap, self.dim))
        new[: self._coords.shape[0]] = self._coords
        self._coords = new

    def __len__(self):
        return int(self.alive.sum())


class Bucket:
    __slots__ = ("rows", "capacity", "unsplittable")

    def __init__(self, rows, capacity: int, unsplittable: bool = False):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.capacity = capacity
        self.unsplittable = unsplittable

    @property
    def size(self) -> int:
        return int(self.rows.shape[0])

    def __repr__(self):
        flag = ", unsplittable" if self.unsplittable else ""
        return f"Bucket(size={self.size}{flag})"


class KdNode:
    __slots__ = ("node_id", "split_dim", "split_val", "left", "right", "weight", "count",
                 "box", "bucket", "depth")

    def __init__(self, node_id: int, depth: int, box: BoundingBox | None = None):
        self.node_id = node_id
        self.depth = depth
        self.split_dim: int | None = None
        self.split_val: float | None = None
        self.left: KdNode | None = None
        self.right: KdNode | None = None
        self.weight = 0.0
        self.count = 0
        self.box = box
        self.bucket: Bucket | None = None

    @property
    def is_leaf(self) -> bool:
        return self.bucket is not None

    def children(self):
        return [c for c in (self.left, self.right) if c is not None]

    def __repr__(self):
        if self.is_leaf:
            return f"KdNode(id={self.node_id}, leaf, n={self.count}, w={self.weight})"
        return f"KdNode(id={self.node_id}, dim={self.split_dim}, val={self.split_val}, w={self.weight})"


class KdTree:
    def __init__(self, store: PointStore, params: TreeParams):
        self.store = store
        self.params = params
        self.dim = store.dim
        self.bits = params.bits or default_bits(self.dim)
        self.nodes: list[KdNode] = []
        self.top_nodes: list[KdNode] = []
        self.order = np.arange(store.n, dtype=np.int64)
        self.root: KdNode | None = None
        self._lock = threading.Lock()
        self._ids = itertools.count()

    def new_node(self, depth: int, box: BoundingBox | None = None) -> KdNode:
        with self._lock:
            node = KdNode(next(self._ids), depth, box)
            self.nodes.append(node)
        return node

    @property
    def bucket_size(self) -> int:
        return self.params.bucket_size

    @property
    def total_weight(self) -> float:
        return self.root.weight if self.root is not None else 0.0

    def iter_nodes(self):
        """Pre-order, lower child first."""
        if self.root is None:
            return
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node.right is not None:
                stack.append(node.right)
            if node.left is not None:
                stack.append(node.left)

    def leaves(self):
        return (n for n in self.iter_nodes() if n.is_leaf)

    def num_buckets(self) -> int:
        return sum(1 for _ in self.leaves())

    def max_depth(self) -> int:
        return max(n.depth for n in self.iter_nodes())

    def linearized(self):
        """Index vector and coordinate vector in current lower-first leaf order."""
        rows = [leaf.bucket.rows for leaf in self.leaves()]
        order = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        self.order = order
        return self.store.ids[order], self.store.coords[order]

    def descend(self, coords) -> tuple[KdNode | None, list[KdNode]]:
        """Follow splitting hyperplanes to the leaf for ``coords``.

        Returns ``(leaf_or_None, path)``; ``None`` when the route hits a
        missing child.
        """
        node = self.root
        path = []
        while node is not None and not node.is_leaf:
            path.append(node)
            if node.split_dim is None:
                return None, path
            node = node.left if coords[node.split_dim] <= node.split_val else node.right
        if node is not None:
            path.append(node)
        return node, path


_TIE_RTOL = 1e-12


def choose_split_dim(box: BoundingBox) -> int:
    """Dimension of maximum width; ties go to the lowest index.

    Widths within a relative ``1e-12`` of the maximum count as ties so that
    rounding in box arithmetic cannot break the fixed tie rule.
    """
    return _split_dim(box.widths)


def _split_dim(w: np.ndarray) -> int:
    wl = w.tolist()
    cut = max(wl) * (1.0 - _TIE_RTOL)
    for i, v in enumerate(wl):
        if v >= cut:
            return i
    return 0


def compute_splitter(points, dim: int, strategy: SplitterStrategy, seed=0) -> float:
    """Splitting value along ``dim`` for an ``(n, d)`` coordinate array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
        dim = 0
    if pts.shape[0] < 2:
        raise InputError("degenerate split")
    if not 0 <= dim < pts.shape[1]:
        raise InputError(f"invalid dimension {dim}")
    vals = pts[:, dim]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _splitter_value(vals, strategy, rng)


def _splitter_value(vals: np.ndarray, strategy: SplitterStrategy, rng) -> float:
    kind = strategy.kind
    if kind is SplitterKind.MIDPOINT:
        return float((vals.min() + vals.max()) / 2.0)
    if kind is SplitterKind.MEDIAN_EXACT:
        return float(np.sort(vals)[(vals.shape[0] - 1) // 2])
    n = vals.shape[0]
    if strategy.sample_size < n:
        sample = vals[rng.choice(n, size=strategy.sample_size, replace=False)]
    else:
        sample = vals
    k = (sample.shape[0] - 1) // 2
    if kind is SplitterKind.MEDIAN_SAMPLE:
        return float(np.sort(sample)[k])
    # selection without a full sort
    return float(np.partition(sample, k)[k])


@dataclass
class _Task:
    node: KdNode
    start: int
    stop: int
    path: int
    cell_lo: np.ndarray | None = None
    cell_hi: np.ndarray | None = None


class _Builder:
    def __init__(self, tree: KdTree):
        self.tree = tree
        self.coords = tree.store.coords
        self.order = tree.order
        self.params = tree.params
        self.max_depth = tree.dim * tree.bits

    def expand(self, task: _Task) -> list[_Task]:
        """Split ``task.node``; return child tasks, or ``[]`` if it became a leaf."""
        tree, node = self.tree, task.node
        start, stop = task.start, task.stop
        lo, hi = kernels.range_bbox(self.coords, self.order, start, stop)
        if self.params.regular:
            node.box = BoundingBox(task.cell_lo, task.cell_hi)
        else:
            node.box = BoundingBox._raw(lo, hi)
        count = stop - start
        if count <= self.params.bucket_size:
            self._make_leaf(node, start, stop)
            return []
        if self.params.regular:
            return self._expand_regular(task)
        w = hi - lo
        if not w.any():
            self._make_leaf(node, start, stop, unsplittable=True)
            return []
        dim = _split_dim(w)
        strategy = self.params.splitter
        if strategy.kind is SplitterKind.MIDPOINT:
            val = _midpoint(lo[dim], hi[dim])
        else:
            vals = self.coords[self.order[start:stop], dim]
            rng = np.random.default_rng((self.params.seed, task.path)) if strategy.randomized else None
            val = _splitter_value(vals, strategy, rng)
        mid = kernels.partition_range(self.coords, self.order, start, stop, dim, val)
        if mid == start or mid == stop:
            # duplicate-heavy medians can leave one side empty
            val = _midpoint(lo[dim], hi[dim])
            mid = kernels.partition_range(self.coords, self.order, start, stop, dim, val)
        node.split_dim = dim
        node.split_val = float(val)
        depth = node.depth + 1
        node.left = tree.new_node(depth)
        node.right = tree.new_node(depth)
        return [_Task(node.left, start, mid, task.path << 1),
                _Task(node.right, mid, stop, (task.path << 1) | 1)]

    def _expand_regular(self, task: _Task) -> list[_Task]:
        node = task.node
        if node.depth >= self.max_depth:
            self._make_leaf(node, task.start, task.stop, unsplittable=True)
            return []
        dim = node.depth % self.tree.dim
        cmid = (task.cell_lo[dim] + task.cell_hi[dim]) / 2.0
        # strictly-below-midpoint goes left, matching floor quantization
        val = float(np.nextafter(cmid, -np.inf))
        mid = kernels.partition_range(self.coords, self.order, task.start, task.stop, dim, val)
        node.split_dim = dim
        node.split_val = val
        out = []
        depth = node.depth + 1
        if mid > task.start:
            hi = task.cell_hi.copy()
            hi[dim] = cmid
            node.left = self.tree.new_node(depth)
            out.append(_Task(node.left, task.start, mid, task.path << 1, task.cell_lo, hi))
        if mid < task.stop:
            lo = task.cell_lo.copy()
            lo[dim] = cmid
            node.right = self.tree.new_node(depth)
            out.append(_Task(node.right, mid, task.stop, (task.path << 1) | 1, lo, task.cell_hi))
        return out

    def _make_leaf(self, node: KdNode, start: int, stop: int, unsplittable: bool = False):
        rows = self.order[start:stop].copy()
        node.bucket = Bucket(rows, self.params.bucket_size, unsplittable)
        node.count = stop - start
        node.weight = float(self.tree.store.weights[rows].sum())

    def breadth_first(self, tasks: list[_Task], target: int) -> list[_Task]:
        """Expand FIFO until at least ``target`` nodes exist or all are terminal.

        Returns the frontier (pending tasks plus nodes already made leaves).
        """
        queue = deque(tasks)
        done: list[_Task] = []
        while queue and len(queue) + len(done) < target:
            task = queue.popleft()
            if task.node.is_leaf:
                done.append(task)
                continue
            children = self.expand(task)
            if children:
                queue.extend(children)
            else:
                done.append(task)
        return sorted(list(queue) + done, key=lambda t: t.start)

    def depth_first(self, task: _Task) -> None:
        stack = [task]
        while stack:
            t = stack.pop()
            if t.node.is_leaf:
                continue
            stack.extend(reversed(self.expand(t)))


def build_static_tree(ds: Dataset, params: TreeParams | None = None) -> KdTree:
    """Build a kd-tree over ``ds`` (expected normalized to the unit cube)."""
    if ds is None or len(ds) == 0:
        raise InputError("empty input")
    params = params or TreeParams()
    tree = KdTree(PointStore.from_dataset(ds), params)
    if params.regular:
        unit = ds.coords
        if np.any(unit < 0) or np.any(unit > 1):
            raise InputError("regular decomposition requires normalized coordinates")
    b = _Builder(tree)
    tree.root = tree.new_node(0)
    d = tree.dim
    root = _Task(tree.root, 0, tree.store.n, 1, np.zeros(d), np.ones(d))

    top = b.breadth_first([root], params.k1)
    subtop: list[_Task] = []
    for t in top:
        subtop.extend(b.breadth_first([t], params.k2))
    subtop.sort(key=lambda t: t.start)
    tree.top_nodes = [t.node for t in subtop]

    pending = [t for t in subtop if not t.node.is_leaf]
    if params.workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            list(pool.map(b.depth_first, pending))
    else:
        for t in pending:
            b.depth_first(t)

    _accumulate(tree.root)
    return tree


def _midpoint(lo: float, hi: float) -> float:
    val = (lo + hi) / 2.0
    if val >= hi:
        # adjacent doubles: keep the low value on the lower side
        val = lo
    return float(val)


def _accumulate(root: KdNode) -> None:
    """Post-order weight/count accumulation for internal nodes."""
    stack = [(root, False)]
    while stack:
        node, seen = stack.pop()
        if node.is_leaf:
            continue
        if not seen:
            stack.append((node, True))
            for c in node.children():
                stack.append((c, False))
            continue
        node.weight = sum(c.weight for c in node.children())
        node.count = sum(c.count for c in node.children())


def check_tree(tree: KdTree, *, max_bucket: int | None = None, rtol: float = 1e-9) -> list[str]:
    """Structural checker; returns a list of violated invariants (empty if sound)."""
    problems: list[str] = []
    store = tree.store
    seen: list[np.ndarray] = []
    limit = max_bucket if max_bucket is not None else tree.bucket_size
    stack = [(tree.root, None)]
    while stack:
        node, parent = stack.pop()
        if node is None:
            continue
        if node.is_leaf != (node.split_dim is None):
            problems.append(f"node {node.node_id}: leaf/bucket/split mismatch")
        if parent is not None and node.box is not None and parent.box is not None:
            if not parent.box.contains_box(node.box):
                problems.append(f"node {node.node_id}: box escapes parent box")
        if node.is_leaf:
            rows = node.bucket.rows
            seen.append(rows)
            if node.bucket.size > limit and not node.bucket.unsplittable:
                problems.append(f"node {node.node_id}: bucket size {node.bucket.size} > {limit}")
            w = float(store.weights[rows].sum())
            if not np.isclose(node.weight, w, rtol=rtol, atol=1e-12):
                problems.append(f"node {node.node_id}: weight {node.weight} != bucket weight {w}")
            if node.count != node.bucket.size:
                problems.append(f"node {node.node_id}: count {node.count} != bucket size")
            if node.box is not None and rows.size:
                c = store.coords[rows]
                if np.any(c < node.box.lo) or np.any(c > node.box.hi):
                    problems.append(f"node {node.node_id}: point outside leaf box")
            continue
        kids = node.children()
        w = sum(k.weight for k in kids)
        if not np.isclose(node.weight, w, rtol=rtol, atol=1e-12):
            problems.append(f"node {node.node_id}: weight {node.weight} != children {w}")
        for side, child in (("left", node.left), ("right", node.right)):
            if child is None:
                continue
            rows = _subtree_rows(child)
            if rows.size:
                v = store.coords[rows, node.split_dim]
                bad = np.any(v > node.split_val) if side == "left" else np.any(v <= node.split_val)
                if bad:
                    problems.append(f"node {node.node_id}: {side} subtree on wrong side of split")
            stack.append((child, node))
    allrows = np.concatenate(seen) if seen else np.empty(0, dtype=np.int64)
    live = np.flatnonzero(store.alive)
    if allrows.shape[0] != live.shape[0] or not np.array_equal(np.sort(allrows), live):
        problems.append("buckets do not hold every live point exactly once")
    return problems


def _subtree_rows(node: KdNode) -> np.ndarray:
    rows = []
    stack = [node]
    while stack:
        n = stack.pop()
        if n.is_leaf:
            rows.append(n.bucket.rows)
        else:
            stack.extend(n.children())
    return np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)


def split_leaf(tree: KdTree, node: KdNode) -> None:
    """Rebuild a leaf in place as a sub-tree whose buckets hold at most ``bucket_size`` points."""
    if not node.is_leaf:
        raise InputError("split_leaf needs a leaf")
    if tree.params.regular:
        raise InputError("leaf splitting is not supported on regular decompositions")
    rows = node.bucket.rows.copy()
    b = _Builder(tree)
    b.order = rows
    node.bucket = None
    ids = tree.store.ids[rows]
    # seeded from content, not node ids, so concurrent inserts cannot change the result
    path = (int(node.depth) << 40) ^ (int(ids.min()) if ids.size else 0)
    b.depth_first(_Task(node, 0, rows.shape[0], path))
    _accumulate(node)
