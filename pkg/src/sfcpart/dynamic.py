"""Dynamic weighted trees: update streams, bucket adjustments and amortized rebalancing."""

from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .balance import PartitionCuts, greedy_knapsack
from .core import BoundingBox, Dataset, InputError, atomic_write_lines
from .kdtree import Bucket, KdNode, KdTree, TreeParams, build_static_tree, check_tree, split_leaf
from .sfc import MORTON, CurveOrder, order_points


class OpKind(enum.Enum):
    INSERT = "I"
    DELETE = "D"


@dataclass(frozen=True)
class UpdateOp:
    kind: OpKind
    id: int
    weight: float = 1.0
    coords: tuple[float, ...] | None = None

    @classmethod
    def insert(cls, pid: int, weight: float, coords) -> "UpdateOp":
        return cls(OpKind.INSERT, int(pid), float(weight), tuple(float(c) for c in coords))

    @classmethod
    def delete(cls, pid: int) -> "UpdateOp":
        return cls(OpKind.DELETE, int(pid))


@dataclass
class UpdateResult:
    applied: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# updates


def _frontier(tree: KdTree) -> list[KdNode]:
    """Top nodes still reachable, plus leaves that sit above them."""
    top = {id(n) for n in tree.top_nodes}
    out = []
    stack = [tree.root] if tree.root is not None else []
    while stack:
        node = stack.pop()
        if id(node) in top or node.is_leaf:
            out.append(node)
            continue
        if node.right is not None:
            stack.append(node.right)
        if node.left is not None:
            stack.append(node.left)
    return out


def _new_leaf(tree: KdTree, parent: KdNode, row: int, weight: float, coords) -> KdNode:
    leaf = tree.new_node(parent.depth + 1, BoundingBox(coords.copy(), coords.copy()))
    leaf.bucket = Bucket([row], tree.bucket_size)
    leaf.weight = weight
    leaf.count = 1
    return leaf


def _route(tree: KdTree, start: KdNode, row: int, weight: float, coords,
           insert: bool, stop: set | None = None):
    """Walk from ``start`` applying the op; stop early at a node in ``stop``.

    Returns the node where the walk stopped (a frontier node), or ``None``
    once the op is fully applied.
    """
    node = start
    cl = coords.tolist()
    dw, dc = (weight, 1) if insert else (-weight, -1)
    while True:
        if stop is not None and id(node) in stop:
            return node
        node.weight += dw
        node.count += dc
        if insert:
            box = node.box
            if box is not None and not box.contains(cl):
                node.box = box.expanded(coords)
        bucket = node.bucket
        if bucket is not None:
            rows = bucket.rows
            if insert:
                bucket.rows = np.append(rows, row)
            else:
                keep = rows != row
                if keep.all():
                    raise RuntimeError(f"row {row} missing from its bucket")
                bucket.rows = rows[keep]
            return None
        left = cl[node.split_dim] <= node.split_val
        child = node.left if left else node.right
        if child is None:
            if not insert:
                raise RuntimeError(f"row {row} routes to a missing child")
            leaf = _new_leaf(tree, node, row, weight, coords)
            if left:
                node.left = leaf
            else:
                node.right = leaf
            return None
        node = child


def apply_updates(tree: KdTree, ops, workers: int = 1) -> UpdateResult:
    """Route each op to its bucket and update ancestor weights.

    Buckets may overflow or empty; no structural repair happens here. Ops
    above the top nodes are applied serially in input order, then each top
    sub-tree replays its own ops in order, sub-trees in parallel.
    """
    res = UpdateResult()
    store = tree.store
    if tree.root is None:
        raise InputError("tree not built")
    # with one worker there is nothing to hand off, so ops go straight to their buckets
    stop = {id(n) for n in _frontier(tree)} if workers > 1 else None
    groups: dict[int, list] = {}
    heads: dict[int, KdNode] = {}
    for i, op in enumerate(ops):
        try:
            if op.kind is OpKind.INSERT:
                if op.coords is None or len(op.coords) != tree.dim:
                    raise InputError(f"insert {op.id}: expected {tree.dim} coordinates")
                if not math.isfinite(op.weight) or op.weight < 0:
                    raise InputError(f"insert {op.id}: invalid weight")
                c = np.asarray(op.coords, dtype=np.float64)
                if not all(map(math.isfinite, op.coords)):
                    raise InputError(f"insert {op.id}: non-finite coordinates")
                row = store.add(op.id, op.weight, c)
                w, insert = op.weight, True
            else:
                if op.id not in store.row_of:
                    raise InputError(f"delete {op.id}: unknown id")
                row = store.remove(op.id)
                c = store.coords[row].copy()
                w, insert = float(store.weights[row]), False
        except InputError as exc:
            res.errors.append((i, str(exc)))
            continue
        head = _route(tree, tree.root, row, w, c, insert, stop)
        res.applied += 1
        if head is not None:
            groups.setdefault(id(head), []).append((row, w, c, insert))
            heads[id(head)] = head

    def run(key):
        head = heads[key]
        for row, w, c, insert in groups[key]:
            _route(tree, head, row, w, c, insert)

    keys = list(groups)
    if workers > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, keys))
    else:
        for k in keys:
            run(k)
    tree.top_nodes = _frontier(tree)
    return res


# ---------------------------------------------------------------------------
# adjustments


def adjustments(tree: KdTree, node: KdNode | None = None, stop_at=()) -> float:
    """Split heavy buckets, prune empty children and merge light sub-trees.

    Structural thresholds compare point counts against ``bucket_size``;
    weights are recomputed alongside. Nodes in ``stop_at`` are treated as
    already adjusted. Returns the weight of ``node``.
    """
    node = tree.root if node is None else node
    if node is None:
        return 0.0
    B = tree.bucket_size
    weights = tree.store.weights
    skip = {id(n) for n in stop_at}
    stack = [(node, False)]
    while stack:
        n, seen = stack.pop()
        if n.is_leaf:
            rows = n.bucket.rows
            n.count = int(rows.shape[0])
            n.weight = float(weights[rows].sum())
            if n.count > 2 * B:
                split_leaf(tree, n)
            continue
        if n is not node and id(n) in skip:
            continue
        if not seen:
            stack.append((n, True))
            for c in n.children():
                stack.append((c, False))
            continue
        if n.left is not None and n.left.count == 0:
            n.left = None
        if n.right is not None and n.right.count == 0:
            n.right = None
        kids = n.children()
        n.count = sum(k.count for k in kids)
        n.weight = sum(k.weight for k in kids)
        if n.count <= B and kids and all(k.is_leaf for k in kids):
            n.bucket = Bucket(np.concatenate([k.bucket.rows for k in kids]), B)
            n.left = n.right = None
            n.split_dim = None
            n.split_val = None
    if node is tree.root and node.count == 0 and not node.is_leaf:
        node.bucket = Bucket(np.empty(0, dtype=np.int64), B)
        node.left = node.right = None
        node.split_dim = node.split_val = None
        node.weight = 0.0
    return node.weight


def concurrent_adjustments(tree: KdTree, workers: int = 1) -> float:
    """Adjust every top sub-tree (in parallel), then the nodes above them."""
    tops = _frontier(tree)
    if workers > 1 and len(tops) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda n: adjustments(tree, n), tops))
    else:
        for n in tops:
            adjustments(tree, n)
    w = adjustments(tree, tree.root, stop_at=tops)
    tree.top_nodes = _frontier(tree)
    return w


def check_adjusted(tree: KdTree) -> list[str]:
    """Invariant sweep for a tree after a root-level adjustments pass."""
    B = tree.bucket_size
    problems = check_tree(tree, max_bucket=2 * B)
    for n in tree.iter_nodes():
        if n.count == 0 and n is not tree.root:
            problems.append(f"node {n.node_id}: empty node not pruned")
        if not n.is_leaf:
            kids = n.children()
            if not kids:
                problems.append(f"node {n.node_id}: internal node without children")
            elif n.count <= B and all(k.is_leaf for k in kids):
                problems.append(f"node {n.node_id}: mergeable light node ({n.count} points)")
            if n.count != sum(k.count for k in kids):
                problems.append(f"node {n.node_id}: count mismatch")
    return problems


# ---------------------------------------------------------------------------
# full balance and the amortized controller


@dataclass
class DynamicState:
    tree: KdTree
    order: CurveOrder
    cuts: PartitionCuts
    params: TreeParams
    curve: str
    nparts: int
    workers: int = 1
    owner: dict[int, int] = field(default_factory=dict)

    def buckets_per_rank(self) -> np.ndarray:
        """Bucket count per rank.

        A bucket belongs to the lowest rank owning one of its points; buckets
        holding only points inserted since the last balance follow the bucket
        before them in lower-then-upper order. This keeps the count
        independent of how many top nodes the build used.
        """
        counts = np.zeros(self.nparts, dtype=np.int64)
        ids = self.tree.store.ids
        owner = self.owner
        rank = 0
        stack = [self.tree.root] if self.tree.root is not None else []
        while stack:
            n = stack.pop()
            if n.is_leaf:
                known = [owner[i] for i in ids[n.bucket.rows].tolist() if i in owner]
                if known:
                    rank = min(known)
                counts[rank] += 1
                continue
            if n.right is not None:
                stack.append(n.right)
            if n.left is not None:
                stack.append(n.left)
        return counts

    def max_buckets(self) -> int:
        return int(self.buckets_per_rank().max())


def _live_dataset(tree: KdTree) -> Dataset:
    s = tree.store
    live = np.flatnonzero(s.alive)
    return Dataset(s.ids[live].copy(), s.weights[live].copy(), s.coords[live].copy())


def full_load_balance(ds: Dataset, params: TreeParams, nparts: int, curve: str = MORTON,
                      workers: int = 1) -> DynamicState:
    """Build, traverse, slice and adjust from scratch."""
    if params.regular:
        raise InputError("dynamic trees need a non-regular decomposition")
    params = replace(params, workers=workers)
    tree = build_static_tree(ds, params)
    order = order_points(tree, curve)
    w = tree.store.weights[order.rows]
    cuts = greedy_knapsack(w, nparts)
    ranks = cuts.ranks()
    owner = dict(zip(order.permutation.tolist(), ranks.tolist()))
    state = DynamicState(tree, order, cuts, params, curve, nparts, workers, owner)
    concurrent_adjustments(tree, workers)
    return state


class ClockMode(enum.Enum):
    WALL = "wall"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class CostClock:
    """Cost source for the controller.

    In synthetic mode a full balance costs ``lb_cost`` and a batch of
    ``numops`` ops costs ``numops * op_cost`` at the baseline batch, with
    ``excess_per_batch`` added to every later batch's per-bucket cost.
    """

    mode: ClockMode = ClockMode.WALL
    lb_cost: float = 10.0
    op_cost: float = 1.0
    excess_per_batch: float = 0.0

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", ClockMode(self.mode))

    @classmethod
    def synthetic(cls, lb_cost=10.0, op_cost=1.0, excess_per_batch=0.0) -> "CostClock":
        return cls(ClockMode.SYNTHETIC, lb_cost, op_cost, excess_per_batch)

    def balance_cost(self, elapsed: float) -> float:
        return elapsed if self.mode is ClockMode.WALL else self.lb_cost

    def batch_cost(self, elapsed: float, k: int, numops: int, totalb: int) -> float:
        if self.mode is ClockMode.WALL:
            return elapsed
        extra = self.excess_per_batch * numops / totalb if k > 0 else 0.0
        return numops * self.op_cost + extra


@dataclass
class ControllerState:
    step_size: int
    max_iter: int
    lbtime: float = 0.0
    totalb: int = 0
    basetimeop: float = 0.0
    basebkt: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.step_size < 1 or self.max_iter < 1:
            raise InputError("step_size and max_iter must be >= 1")


@dataclass(frozen=True)
class TraceRow:
    iter: int
    cost: float
    delta: float
    balanced: bool
    buckets: int

    def csv(self) -> str:
        return f"{self.iter},{self.cost:.12g},{self.delta:.12g},{int(self.balanced)},{self.buckets}"


@dataclass
class DynamicTrace:
    rows: list[TraceRow]
    num_balances: int
    ctrl: ControllerState
    errors: list[tuple[int, str]] = field(default_factory=list)
    state: DynamicState | None = field(default=None, repr=False)

    @property
    def balance_iters(self) -> list[int]:
        return [r.iter for r in self.rows if r.balanced]

    def to_csv(self) -> list[str]:
        return ["iter,cost,delta,balanced,buckets"] + [r.csv() for r in self.rows]


def write_trace(path, trace: DynamicTrace) -> None:
    atomic_write_lines(path, trace.to_csv())


def run_dynamic(ds: Dataset, workload, ctrl: ControllerState, clock: CostClock | None = None,
                params: TreeParams | None = None, nparts: int = 1, curve: str = MORTON,
                workers: int = 1) -> DynamicTrace:
    """Process a workload in batches with amortized full load balancing.

    The workload is split in order into ``max_iter // step_size`` batches,
    one per iteration that is a multiple of ``step_size``; adjustments run
    every ``2 * step_size`` iterations.
    """
    clock = clock or CostClock()
    params = params or TreeParams()
    ops = list(workload)
    nbatch = ctrl.max_iter // ctrl.step_size
    batches = _split_even(ops, nbatch)

    def balance(data):
        t1 = time.perf_counter()
        st = full_load_balance(data, params, nparts, curve, workers)
        t2 = time.perf_counter()
        ctrl.totalb = st.max_buckets()
        ctrl.lbtime = clock.balance_cost(t2 - t1)
        return st

    state = balance(ds)
    ctrl.delta = ctrl.basetimeop = ctrl.basebkt = 0.0
    rows = [TraceRow(0, ctrl.lbtime, 0.0, True, ctrl.totalb)]
    nbal = 1
    errors: list[tuple[int, str]] = []
    k = 0
    done = 0
    for it in range(1, ctrl.max_iter + 1):
        if it % ctrl.step_size == 0:
            batch = batches[it // ctrl.step_size - 1]
            t1 = time.perf_counter()
            res = apply_updates(state.tree, batch, workers)
            t2 = time.perf_counter()
            errors.extend((done + i, m) for i, m in res.errors)
            done += len(batch)
            numops = res.applied
            balanced = False
            cost = 0.0
            if numops > 0:
                ctime = clock.batch_cost(t2 - t1, k, numops, max(ctrl.totalb, 1))
                timeperop = ctime / numops
                if ctrl.basetimeop == 0:
                    ctrl.basetimeop = timeperop
                    ctrl.basebkt = ctrl.basetimeop * ctrl.totalb
                    ctrl.delta = 0.0
                    cost = ctrl.basebkt
                else:
                    timebkt = timeperop * ctrl.totalb
                    cost = timebkt
                    if timebkt > ctrl.basebkt:
                        ctrl.delta += timebkt - ctrl.basebkt
                k += 1
            delta_seen = ctrl.delta
            if ctrl.delta >= ctrl.lbtime and ctrl.basetimeop != 0:
                state = balance(_live_dataset(state.tree))
                ctrl.delta = 0.0
                ctrl.basetimeop = 0.0
                balanced = True
                nbal += 1
                k = 0
            rows.append(TraceRow(it, cost, delta_seen, balanced, state.max_buckets()))
        if it % (2 * ctrl.step_size) == 0:
            concurrent_adjustments(state.tree, workers)
    return DynamicTrace(rows, nbal, ctrl, errors, state)


def _split_even(ops: list, nbatch: int) -> list[list]:
    if nbatch <= 0:
        return []
    bounds = np.linspace(0, len(ops), nbatch + 1).round().astype(int)
    return [ops[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


# ---------------------------------------------------------------------------
# workload files


def read_workload(path, dim: int | None = None) -> list[UpdateOp]:
    ops = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split()
            if not s or s[0].startswith("#"):
                continue
            try:
                if s[0] == "I":
                    if len(s) < 4 or (dim is not None and len(s) != 3 + dim):
                        raise ValueError("bad insert")
                    ops.append(UpdateOp.insert(int(s[1]), float(s[2]), [float(v) for v in s[3:]]))
                elif s[0] == "D" and len(s) == 2:
                    ops.append(UpdateOp.delete(int(s[1])))
                else:
                    raise ValueError("bad op")
            except ValueError:
                raise InputError(f"{path}:{lineno}: expected 'I id weight c..' or 'D id'") from None
    return ops


def write_workload(path, ops) -> None:
    lines = []
    for op in ops:
        if op.kind is OpKind.INSERT:
            lines.append(" ".join(["I", str(op.id), repr(op.weight)] + [repr(c) for c in op.coords]))
        else:
            lines.append(f"D {op.id}")
    atomic_write_lines(path, lines)


def random_workload(ds: Dataset, nops: int, seed: int = 0, insert_fraction: float = 0.5,
                    skew: float = 0.0) -> list[UpdateOp]:
    """Random insert/delete stream over ``ds``; ``skew`` pulls inserts toward the origin corner."""
    rng = np.random.default_rng(seed)
    coin = (rng.random(nops) < insert_fraction).tolist()
    lo, hi = ds.domain_box.lo, ds.domain_box.hi
    pts = (lo + rng.random((nops, ds.dim)) ** (1.0 + skew) * (hi - lo)).tolist()
    picks = rng.random(nops).tolist()
    live = ds.ids.tolist()
    nxt = int(ds.ids.max()) + 1
    ops = []
    for i in range(nops):
        if coin[i] or len(live) <= 1:
            ops.append(UpdateOp(OpKind.INSERT, nxt, 1.0, tuple(pts[i])))
            live.append(nxt)
            nxt += 1
        else:
            j = int(picks[i] * len(live))
            pid = live[j]
            live[j] = live[-1]
            live.pop()
            ops.append(UpdateOp(OpKind.DELETE, pid))
    return ops
