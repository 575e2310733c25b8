"""Sparse-matrix partitioning, vector plans and simulated distributed SpMV."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .balance import QualityMetrics, greedy_knapsack
from .core import Dataset, InputError, atomic_write_lines, normalize
from .kdtree import SplitterStrategy, TreeParams, build_static_tree
from .sfc import MORTON, order_points


@dataclass(eq=False)
class SparseMatrixCoo:
    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int64).reshape(-1)
        self.cols = np.ascontiguousarray(self.cols, dtype=np.int64).reshape(-1)
        if self.vals is None:
            self.vals = np.ones(self.rows.shape[0])
        self.vals = np.ascontiguousarray(self.vals, dtype=np.float64).reshape(-1)
        if not (self.rows.shape == self.cols.shape == self.vals.shape):
            raise InputError("rows, cols and vals differ in length")
        if self.n_rows < 0 or self.n_cols < 0:
            raise InputError("negative matrix dimension")
        if self.nnz:
            if self.rows.min() < 0 or self.rows.max() >= self.n_rows:
                raise InputError("row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.n_cols:
                raise InputError("column index out of range")
            if np.unique(self.keys()).shape[0] != self.nnz:
                raise InputError("duplicate (row, col) entries")

    @property
    def nnz(self) -> int:
        return int(self.rows.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    def keys(self) -> np.ndarray:
        return self.rows * max(self.n_cols, 1) + self.cols

    def canonical(self) -> np.ndarray:
        """Permutation putting entries in ascending (row, col) order."""
        return np.lexsort((self.cols, self.rows))

    def matvec(self, x) -> np.ndarray:
        """Sequential product, summed in ascending (row, col) order."""
        x = _check_x(self, x)
        p = self.canonical()
        y = np.zeros(self.n_rows)
        np.add.at(y, self.rows[p], self.vals[p] * x[self.cols[p]])
        return y

    def to_dense(self) -> np.ndarray:
        a = np.zeros(self.shape)
        a[self.rows, self.cols] = self.vals
        return a

    @classmethod
    def from_triples(cls, n_rows, n_cols, rows, cols, vals=None, dedup=True) -> "SparseMatrixCoo":
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        vals = np.ones(rows.shape[0]) if vals is None else np.asarray(vals, dtype=np.float64)
        if dedup and rows.size:
            _, first = np.unique(rows * max(n_cols, 1) + cols, return_index=True)
            keep = np.sort(first)
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
        return cls(n_rows, n_cols, rows, cols, vals)


def _check_x(m: SparseMatrixCoo, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != m.n_cols:
        raise InputError(f"vector has length {x.shape[0]}, matrix has {m.n_cols} columns")
    return x


# ---------------------------------------------------------------------------
# loaders


def load_matrix(path, fmt: str = "mm") -> SparseMatrixCoo:
    """Read a MatrixMarket coordinate file (``mm``) or a whitespace edge list (``edgelist``)."""
    if fmt in ("mm", "matrixmarket"):
        return _load_mm(path)
    if fmt in ("edgelist", "edges"):
        return _load_edges(path)
    raise InputError(f"unknown matrix format {fmt!r}")


def _data_lines(lines, start, comment):
    for lineno, line in enumerate(lines[start:], start + 1):
        s = line.strip()
        if s and not s.startswith(comment):
            yield lineno, s


def _parse_table(path, numbered, ncols_allowed, index_cols) -> tuple[np.ndarray, list[int]]:
    numbered = list(numbered)
    linenos = [n for n, _ in numbered]
    if not numbered:
        return np.empty((0, max(ncols_allowed))), linenos
    widths = {len(s.split()) for _, s in numbered}
    try:
        if len(widths) == 1 and widths.pop() in ncols_allowed:
            tab = np.array(" ".join(s for _, s in numbered).split(), dtype=np.float64)
            return tab.reshape(len(numbered), -1), linenos
    except ValueError:
        pass
    # slow path to pinpoint the offending line
    out = []
    w = None
    for lineno, s in numbered:
        parts = s.split()
        if len(parts) not in ncols_allowed or (w is not None and len(parts) != w):
            raise InputError(f"{path}:{lineno}: expected {'/'.join(map(str, ncols_allowed))} columns")
        w = len(parts)
        try:
            out.append([float(p) for p in parts])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    return np.array(out), linenos


def _int_cols(path, tab, linenos, cols):
    idx = tab[:, cols]
    bad = np.flatnonzero(np.any(idx != np.floor(idx), axis=1))
    if bad.size:
        raise InputError(f"{path}:{linenos[bad[0]]}: non-integer index")
    return idx.astype(np.int64)


def _load_mm(path) -> SparseMatrixCoo:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise InputError(f"{path}:1: empty file")
    head = lines[0].split()
    if len(head) != 5 or head[0].lower() != "%%matrixmarket":
        raise InputError(f"{path}:1: missing %%MatrixMarket header")
    obj, fmt, fieldname, symmetry = (h.lower() for h in head[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise InputError(f"{path}:1: only 'matrix coordinate' files are supported")
    if fieldname not in ("real", "integer", "pattern", "double"):
        raise InputError(f"{path}:1: unsupported field {fieldname!r}")
    if symmetry not in ("general", "symmetric", "skew-symmetric"):
        raise InputError(f"{path}:1: unsupported symmetry {symmetry!r}")
    body = _data_lines(lines, 1, "%")
    try:
        size_no, size = next(body)
    except StopIteration:
        raise InputError(f"{path}: missing size line") from None
    try:
        n_rows, n_cols, nnz = (int(v) for v in size.split())
    except ValueError:
        raise InputError(f"{path}:{size_no}: expected 'rows cols nnz'") from None
    width = (2,) if fieldname == "pattern" else (3,)
    tab, linenos = _parse_table(path, body, width, [0, 1])
    if tab.shape[0] != nnz:
        raise InputError(f"{path}: header declares {nnz} entries, found {tab.shape[0]}")
    ij = _int_cols(path, tab, linenos, [0, 1]) - 1
    for k, n in ((0, n_rows), (1, n_cols)):
        bad = np.flatnonzero((ij[:, k] < 0) | (ij[:, k] >= n))
        if bad.size:
            raise InputError(f"{path}:{linenos[bad[0]]}: index out of range")
    vals = np.ones(tab.shape[0]) if fieldname == "pattern" else tab[:, 2]
    r, c = ij[:, 0], ij[:, 1]
    if symmetry != "general":
        sign = -1.0 if symmetry == "skew-symmetric" else 1.0
        off = r != c
        # each mirrored entry directly follows its source so "keep first" is well defined
        n = r.shape[0]
        order = np.argsort(np.concatenate([np.arange(n) * 2, np.flatnonzero(off) * 2 + 1]),
                           kind="stable")
        r = np.concatenate([r, ij[off, 1]])[order]
        c = np.concatenate([c, ij[off, 0]])[order]
        vals = np.concatenate([vals, sign * vals[off]])[order]
    return SparseMatrixCoo.from_triples(n_rows, n_cols, r, c, vals)


def _load_edges(path) -> SparseMatrixCoo:
    with open(path) as fh:
        lines = fh.read().splitlines()
    tab, linenos = _parse_table(path, _data_lines(lines, 0, "#"), (2, 3), [0, 1])
    if tab.shape[0] == 0:
        raise InputError(f"{path}: no edges")
    ij = _int_cols(path, tab, linenos, [0, 1])
    bad = np.flatnonzero(np.any(ij < 0, axis=1))
    if bad.size:
        raise InputError(f"{path}:{linenos[bad[0]]}: negative index")
    n = int(ij.max()) + 1
    vals = tab[:, 2] if tab.shape[1] == 3 else None
    return SparseMatrixCoo.from_triples(n, n, ij[:, 0], ij[:, 1], vals)


def write_matrix_market(path, m: SparseMatrixCoo) -> None:
    def lines():
        yield "%%MatrixMarket matrix coordinate real general"
        yield f"{m.n_rows} {m.n_cols} {m.nnz}"
        for i, j, v in zip(m.rows.tolist(), m.cols.tolist(), m.vals.tolist()):
            yield f"{i + 1} {j + 1} {v!r}"

    atomic_write_lines(path, lines())


# ---------------------------------------------------------------------------
# generators


def grid_graph(nx: int, ny: int | None = None) -> SparseMatrixCoo:
    """Adjacency matrix of the ``nx`` by ``ny`` 4-neighbor grid graph (row-major numbering)."""
    ny = nx if ny is None else ny
    idx = np.arange(nx * ny).reshape(ny, nx)
    pairs = [np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()]),
             np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])]
    e = np.concatenate(pairs)
    r = np.concatenate([e[:, 0], e[:, 1]])
    c = np.concatenate([e[:, 1], e[:, 0]])
    n = nx * ny
    return SparseMatrixCoo.from_triples(n, n, r, c)


def random_sparse(n_rows: int, n_cols: int, density: float, seed: int = 0) -> SparseMatrixCoo:
    rng = np.random.default_rng(seed)
    k = max(1, int(round(density * n_rows * n_cols)))
    flat = rng.choice(n_rows * n_cols, size=k, replace=False)
    return SparseMatrixCoo(n_rows, n_cols, flat // n_cols, flat % n_cols, rng.standard_normal(k))


def powerlaw_matrix(n: int, nnz: int, seed: int = 0, exponent: float = 2.0) -> SparseMatrixCoo:
    """Square pattern matrix whose row and column indices follow a Zipf-like law."""
    rng = np.random.default_rng(seed)
    keys = np.empty(0, dtype=np.int64)
    while keys.shape[0] < nnz:
        k = int((nnz - keys.shape[0]) * 1.2) + 16
        r = np.minimum(rng.zipf(exponent, k) - 1, n - 1)
        c = rng.integers(0, n, k)
        keys = np.unique(np.concatenate([keys, r * n + c]))
    keys = rng.permutation(keys)[:nnz]
    # shuffle hub ids so heavy rows are scattered through the matrix
    perm = rng.permutation(n)
    rows, cols = perm[keys // n], keys % n
    return SparseMatrixCoo(n, n, rows, cols, None)


# ---------------------------------------------------------------------------
# partitions


class Method(enum.Enum):
    SFC = "sfc"
    ROWWISE = "rowwise"


@dataclass(eq=False)
class NnzPartition:
    owner: np.ndarray
    method: Method
    nparts: int
    seconds: float = 0.0

    def loads(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.nparts)


def partition_nnz_sfc(m: SparseMatrixCoo, nparts: int, curve: str = MORTON,
                      splitter: SplitterStrategy | str = "midpoint", bucket_size: int = 32,
                      workers: int = 1, seed: int = 0, k1: int | None = None,
                      k2: int | None = None) -> NnzPartition:
    """Treat each non-zero as a unit-weight point ``(row, col)`` and slice the curve.

    ``k1`` and ``k2`` default to ``2 * nparts`` and ``2 * workers``.
    """
    if nparts < 1:
        raise InputError("number of ranks must be >= 1")
    if m.nnz == 0:
        raise InputError("empty input")
    if isinstance(splitter, str):
        splitter = SplitterStrategy(splitter)
    coords = np.column_stack([m.rows, m.cols]).astype(np.float64)
    ds = normalize(Dataset(np.arange(m.nnz), np.ones(m.nnz), coords))
    params = TreeParams(bucket_size=bucket_size, splitter=splitter, workers=workers,
                        seed=seed, k1=k1 or 2 * nparts, k2=k2 or 2 * workers)
    tree = build_static_tree(ds, params)
    order = order_points(tree, curve)
    cuts = greedy_knapsack(np.ones(m.nnz), nparts)
    owner = np.empty(m.nnz, dtype=np.int64)
    owner[order.permutation] = cuts.ranks()
    return NnzPartition(owner, Method.SFC, nparts)


def partition_rowwise(m: SparseMatrixCoo, nparts: int) -> NnzPartition:
    """Contiguous row blocks of ``ceil(n_rows / P)`` rows."""
    if nparts < 1:
        raise InputError("number of ranks must be >= 1")
    block = max(1, -(-m.n_rows // nparts))
    return NnzPartition(np.minimum(m.rows // block, nparts - 1), Method.ROWWISE, nparts)


# ---------------------------------------------------------------------------
# vector plan


def _runs(sorted_unique: np.ndarray) -> np.ndarray:
    """Merge sorted distinct integers into half-open ``[start, stop)`` intervals."""
    if sorted_unique.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    brk = np.flatnonzero(np.diff(sorted_unique) != 1) + 1
    starts = sorted_unique[np.concatenate([[0], brk])]
    stops = sorted_unique[np.concatenate([brk - 1, [sorted_unique.size - 1]])] + 1
    return np.column_stack([starts, stops])


def _subtract(intervals: np.ndarray, lo: int, hi: int) -> np.ndarray:
    out = []
    for a, b in intervals.tolist():
        if b <= lo or a >= hi:
            out.append((a, b))
            continue
        if a < lo:
            out.append((a, lo))
        if b > hi:
            out.append((hi, b))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


@dataclass(eq=False)
class VectorPlan:
    """Ownership of a dense vector of length ``n`` across ``nparts`` ranks.

    The vector is cut into ``nparts`` equal slices ``bounds[s]:bounds[s+1]``.
    Slice ``s`` starts out owned by rank ``s``; after refinement it belongs
    to ``spanning_owner[s]``.
    """

    n: int
    nparts: int
    bounds: np.ndarray
    spanning_owner: np.ndarray
    required: list[np.ndarray]
    overlap: np.ndarray = field(repr=False)   # overlap[s, r] = |slice s ∩ required_r|
    axis: str = "col"

    def owned(self, rank: int) -> tuple[int, int]:
        return int(self.bounds[rank]), int(self.bounds[rank + 1])

    @property
    def dependent(self) -> list[np.ndarray]:
        """Required intervals outside each rank's initial slice."""
        return [_subtract(req, *self.owned(r)) for r, req in enumerate(self.required)]

    def required_length(self) -> np.ndarray:
        return np.array([int((q[:, 1] - q[:, 0]).sum()) for q in self.required], dtype=np.int64)

    def dependent_length(self, refined: bool = True) -> np.ndarray:
        owners = self.spanning_owner if refined else np.arange(self.nparts)
        local = np.zeros(self.nparts, dtype=np.int64)
        np.add.at(local, owners, self.overlap[np.arange(self.nparts), owners])
        return self.required_length() - local

    def owner_of(self, idx) -> np.ndarray:
        s = np.searchsorted(self.bounds, np.asarray(idx), side="right") - 1
        return self.spanning_owner[np.clip(s, 0, self.nparts - 1)]

    def owned_intervals(self, rank: int) -> list[tuple[int, int]]:
        return [self.owned(s) for s in np.flatnonzero(self.spanning_owner == rank).tolist()]


def _rank_index_pairs(owner: np.ndarray, index: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct ``(rank, index)`` pairs, sorted by rank then index."""
    key = np.unique(owner.astype(np.int64) * max(n, 1) + index)
    return key // max(n, 1), key % max(n, 1)


def _plan_inputs(m: SparseMatrixCoo, part: NnzPartition, axis: str):
    if axis == "col":
        return m.n_cols, part.owner, m.cols
    if axis == "row":
        return m.n_rows, part.owner, m.rows
    if axis == "both":
        if m.n_rows != m.n_cols:
            raise InputError("a shared x/y plan needs a square matrix")
        return m.n_cols, np.concatenate([part.owner, part.owner]), np.concatenate([m.cols, m.rows])
    raise InputError("axis must be 'col', 'row' or 'both'")


def vector_plan(m: SparseMatrixCoo, part: NnzPartition, axis: str | None = None) -> VectorPlan:
    """Owned slices, required intervals and one spanning-set refinement pass.

    ``axis="col"`` plans x alone and ``axis="row"`` y alone. ``axis="both"``
    (the default for square matrices) plans a single vector that serves as
    x and receives the reduced y, so a rank requires every index it touches
    as a row or a column. A slice moves to the rank whose required intervals
    overlap it most, ties to the lowest rank; a slice nobody needs stays with
    its initial owner.
    """
    if axis is None:
        axis = "both" if m.n_rows == m.n_cols else "col"
    n, owner_of_nnz, index = _plan_inputs(m, part, axis)
    P = part.nparts
    bounds = -(-np.arange(P + 1, dtype=np.int64) * n // P)
    ranks, idx = _rank_index_pairs(owner_of_nnz, index, n)
    split = np.searchsorted(ranks, np.arange(P + 1), side="left")
    required = [_runs(idx[split[r]:split[r + 1]]) for r in range(P)]
    slice_of = np.searchsorted(bounds, idx, side="right") - 1
    overlap = np.zeros((P, P), dtype=np.int64)
    np.add.at(overlap, (slice_of, ranks), 1)
    best = np.argmax(overlap, axis=1)
    owner = np.where(overlap.max(axis=1) > 0, best, np.arange(P))
    return VectorPlan(n, P, bounds, owner.astype(np.int64), required, overlap, axis)


# ---------------------------------------------------------------------------
# simulation and metrics


@dataclass
class CommReport:
    messages: np.ndarray         # messages sent per rank
    volume: np.ndarray           # vector entries sent per rank
    tree_sizes: list[int]        # ranks taking part in each reduce-scatter tree

    @property
    def total_messages(self) -> int:
        return int(self.messages.sum())

    @property
    def total_volume(self) -> int:
        return int(self.volume.sum())


def _transfers(pairs_rank, pairs_idx, plan: VectorPlan):
    """Per (owner, consumer) transfer lengths for entries held away from their owner."""
    own = plan.owner_of(pairs_idx)
    away = own != pairs_rank
    src, dst, idx = own[away], pairs_rank[away], pairs_idx[away]
    return src, dst, idx


def spmv_sim(m: SparseMatrixCoo, x, part: NnzPartition, plan: VectorPlan | None = None,
             yplan: VectorPlan | None = None) -> tuple[np.ndarray, CommReport]:
    """Two-step distributed product: local partial sums, then reduce-scatter of y.

    Every rank sums its own non-zeros in ascending (row, col) order; partial
    rows are reduced at the owner of the y slice in ascending rank order.
    """
    x = _check_x(m, x)
    P = part.nparts
    plan = plan or vector_plan(m, part)
    if yplan is None:
        yplan = plan if plan.axis == "both" else vector_plan(m, part, "row")

    order = np.lexsort((m.cols, m.rows, part.owner))
    own, r = part.owner[order], m.rows[order]
    prod = m.vals[order] * x[m.cols[order]]
    # partial sums per (rank, row), each accumulated sequentially
    grp = np.concatenate([[True], (np.diff(own) != 0) | (np.diff(r) != 0)])
    gid = np.cumsum(grp) - 1
    partial = np.zeros(int(gid[-1]) + 1 if gid.size else 0)
    np.add.at(partial, gid, prod)
    p_rank, p_row = own[grp], r[grp]
    y = np.zeros(m.n_rows)
    np.add.at(y, p_row, partial)   # ranks ascend within every row

    messages = np.zeros(P, dtype=np.int64)
    volume = np.zeros(P, dtype=np.int64)
    xr, xi = _rank_index_pairs(part.owner, m.cols, m.n_cols)
    src, dst, _ = _transfers(xr, xi, plan)
    _tally(src, dst, messages, volume, P)
    ysrc, ydst, yidx = _transfers(p_rank, p_row, yplan)
    # reduce: consumer -> owner; scatter: owner -> consumer
    _tally(ydst, ysrc, messages, volume, P)
    _tally(ysrc, ydst, messages, volume, P)
    tree_sizes = []
    yslice = np.searchsorted(yplan.bounds, p_row, side="right") - 1
    for s in range(P):
        members = np.unique(p_rank[yslice == s])
        tree_sizes.append(int(np.union1d(members, [yplan.spanning_owner[s]]).size))
    return y, CommReport(messages, volume, tree_sizes)


def _tally(src, dst, messages, volume, P):
    if src.size == 0:
        return
    np.add.at(volume, src, 1)
    pair = np.unique(src * P + dst)
    np.add.at(messages, pair // P, 1)


def comm_metrics(m: SparseMatrixCoo, part: NnzPartition, plan: VectorPlan | None = None,
                 yplan: VectorPlan | None = None) -> QualityMetrics:
    """Load and communication metrics of a non-zero partition.

    A rank's edge cut counts the distinct vector entries it touches but does
    not own (one shared vector for square matrices, x plus y otherwise); its
    degree counts the distinct ranks it exchanges entries with in either
    direction.
    """
    P = part.nparts
    plan = plan or vector_plan(m, part)
    plans = [plan]
    if plan.axis != "both":
        plans.append(yplan or vector_plan(m, part, "row" if plan.axis == "col" else "col"))
    cut = np.zeros(P, dtype=np.int64)
    links = []
    for vp in plans:
        n, owner_of_nnz, index = _plan_inputs(m, part, vp.axis)
        pr, pi = _rank_index_pairs(owner_of_nnz, index, n)
        src, dst, _ = _transfers(pr, pi, vp)
        np.add.at(cut, dst, 1)
        links.append(np.column_stack([src, dst]))
        links.append(np.column_stack([dst, src]))
    both = np.unique(np.concatenate(links), axis=0)
    degree = np.bincount(both[:, 0], minlength=P) if both.size else np.zeros(P, dtype=np.int64)
    loads = part.loads()
    return QualityMetrics(P, int(m.nnz) // P, int(loads.max()), int(degree.max()),
                          int(cut.max()), int(loads.min()))


def relative_error(y, ref) -> float:
    y, ref = np.asarray(y), np.asarray(ref)
    scale = max(float(np.abs(ref).max()) if ref.size else 0.0, np.finfo(float).tiny)
    return float(np.abs(y - ref).max() / scale) if ref.size else 0.0
