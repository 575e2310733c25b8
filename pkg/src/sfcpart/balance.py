"""Curve slicing, migration planning and partition quality metrics."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import InputError, atomic_write_lines


@dataclass(frozen=True, eq=False)
class PartitionCuts:
    """Contiguous slicing of a curve of ``n`` elements into ``nparts`` ranks.

    Rank ``r`` owns curve positions ``cuts[r]:cuts[r+1]``.
    """

    nparts: int
    cuts: np.ndarray
    loads: np.ndarray

    @property
    def n(self) -> int:
        return int(self.cuts[-1])

    def ranks(self) -> np.ndarray:
        """Rank of every curve position."""
        return np.repeat(np.arange(self.nparts, dtype=np.int64), np.diff(self.cuts))

    def __eq__(self, other):
        if not isinstance(other, PartitionCuts):
            return NotImplemented
        return self.nparts == other.nparts and np.array_equal(self.cuts, other.cuts)


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    ids: tuple[int, ...]


@dataclass
class MigrationPlan:
    rounds: list[list[Message]]
    max_msg_size: int

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)

    @property
    def num_moved(self) -> int:
        return sum(len(m.ids) for r in self.rounds for m in r)

    def messages(self):
        for r in self.rounds:
            yield from r

    def apply(self, owner):
        """Replay the plan on an ownership map (dict or array indexed by id)."""
        out = dict(owner) if isinstance(owner, Mapping) else np.array(owner, copy=True)
        for rnd in self.rounds:
            for msg in rnd:
                for pid in msg.ids:
                    if out[pid] != msg.src:
                        raise InputError(f"id {pid} is not on rank {msg.src}")
                    out[pid] = msg.dst
        return out


@dataclass(frozen=True)
class QualityMetrics:
    procs: int
    avg_load: float
    max_load: float
    max_degree: int
    max_edge_cut: float
    min_load: float = field(default=0.0, compare=False)

    def to_line(self, partition_time: float | None = None, with_edges: bool = True) -> str:
        """Key-value line; edge columns print ``NA`` when no graph was given."""
        parts = [
            f"procs={self.procs}",
            f"avg_load={_num(self.avg_load)}",
            f"max_load={_num(self.max_load)}",
            f"max_degree={self.max_degree if with_edges else 'NA'}",
            f"max_edge_cut={_num(self.max_edge_cut) if with_edges else 'NA'}",
        ]
        if partition_time is not None:
            parts.append(f"partition_time_s={partition_time:.6f}")
        return " ".join(parts)


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


# ---------------------------------------------------------------------------
# slicing


def _validate_weights(weights, nparts: int) -> np.ndarray:
    w = np.ascontiguousarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] < 1:
        raise InputError("empty input")
    if nparts < 1:
        raise InputError("number of ranks must be >= 1")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InputError("weights must be finite and non-negative")
    if not w.sum() > 0:
        raise InputError("zero total load")
    return w


def _is_integral(w: np.ndarray) -> bool:
    return bool(np.all(w == np.floor(w)) and w.sum() * 4 < 2.0 ** 53)


def cuts_from_ranks(ranks: np.ndarray, weights: np.ndarray, nparts: int) -> PartitionCuts:
    cuts = np.searchsorted(ranks, np.arange(nparts + 1), side="left").astype(np.int64)
    cuts[-1] = ranks.shape[0]
    loads = np.bincount(ranks, weights=weights, minlength=nparts)
    return PartitionCuts(nparts, cuts, loads)


def _loads_from_cuts(w: np.ndarray, cuts: np.ndarray, nparts: int) -> np.ndarray:
    ranks = np.repeat(np.arange(nparts), np.diff(cuts))
    return np.bincount(ranks, weights=w, minlength=nparts)


def greedy_knapsack(weights, nparts: int) -> PartitionCuts:
    """Slice weights (in curve order) into ``nparts`` contiguous ranks.

    Each element is assigned rank ``min(P-1, floor(prefix * P / total))``
    from its exclusive prefix sum. That rule alone only bounds the load
    spread by twice the largest weight, so when the spread exceeds one
    largest weight the cuts are recomputed by a window search that always
    achieves ``max - min <= max weight``.
    """
    w = _validate_weights(weights, nparts)
    ranks = kernels.knapsack_floor(w, nparts, _is_integral(w))
    part = cuts_from_ranks(ranks, w, nparts)
    wmax = float(w.max())
    tol = 1e-12 * float(w.sum())
    if part.loads.max() - part.loads.min() <= wmax + tol or nparts == 1:
        return part
    cuts = _window_cuts(w, nparts, wmax)
    if cuts is None:
        return part
    return PartitionCuts(nparts, cuts, _loads_from_cuts(w, cuts, nparts))


def _window_cuts(w: np.ndarray, nparts: int, width: float) -> np.ndarray | None:
    """Contiguous cuts with every load in ``[L, L + width]`` for the largest feasible ``L``.

    The reachable positions of cut ``k`` form an index interval, so
    feasibility of a load window is an ``O(P log n)`` scan; ``L`` is found by
    bisection.
    """
    pre = np.zeros(w.shape[0] + 1)
    np.cumsum(w, out=pre[1:])
    total = float(pre[-1])
    n = w.shape[0]
    eps = max(1e-12 * total, 1e-300)

    def feasible_lower(L):
        return kernels.window_reach(pre, nparts, L, width, eps)[2]

    lo_l, hi_l = 0.0, total / nparts
    if feasible_lower(hi_l):
        lower = hi_l
    else:
        for _ in range(200):
            if hi_l - lo_l <= eps / 8:
                break
            mid = 0.5 * (lo_l + hi_l)
            if feasible_lower(mid):
                lo_l = mid
            else:
                hi_l = mid
        lower = lo_l
    lo_idx, hi_idx, ok = kernels.window_reach(pre, nparts, lower, width, eps)
    if not ok or pre[hi_idx[-1]] < total - lower - width - eps:
        return None

    cuts = np.empty(nparts + 1, dtype=np.int64)
    cuts[0] = 0
    cuts[nparts] = n
    nxt_val = total
    nxt_idx = n
    for k in range(nparts - 1, 0, -1):
        bound = max(nxt_val - lower - width - eps, pre[lo_idx[k]])
        idx = int(np.searchsorted(pre, bound, side="left"))
        idx = min(max(idx, int(lo_idx[k])), nxt_idx)
        if idx > hi_idx[k] or pre[idx] > nxt_val - lower + eps:
            return None
        cuts[k] = idx
        nxt_val = pre[idx]
        nxt_idx = idx
    return cuts


def incremental_rebalance(old: PartitionCuts, new_weights, ids=None,
                          max_msg_size: int | None = None) -> tuple[PartitionCuts, MigrationPlan]:
    """Re-slice the unchanged curve under new weights and plan the moves.

    ``ids`` names the element at each curve position (defaults to the
    position itself).
    """
    w = np.asarray(new_weights, dtype=np.float64)
    if w.shape[0] != old.n:
        raise InputError(f"expected {old.n} weights, got {w.shape[0]}")
    new = greedy_knapsack(w, old.nparts)
    ids = np.arange(old.n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    cap = max_msg_size or max(1, old.n)
    plan = _plan_arrays(ids, old.ranks(), new.ranks(), cap)
    return new, plan


# ---------------------------------------------------------------------------
# migration


def _owner_arrays(old_owner, new_owner):
    if isinstance(old_owner, Mapping) or isinstance(new_owner, Mapping):
        if not (isinstance(old_owner, Mapping) and isinstance(new_owner, Mapping)):
            raise InputError("ownership maps must be the same kind")
        if old_owner.keys() != new_owner.keys():
            raise InputError("ownership maps cover different id sets")
        ids = np.array(sorted(old_owner), dtype=np.int64)
        old = np.array([old_owner[i] for i in ids.tolist()], dtype=np.int64)
        new = np.array([new_owner[i] for i in ids.tolist()], dtype=np.int64)
        return ids, old, new
    old = np.asarray(old_owner, dtype=np.int64)
    new = np.asarray(new_owner, dtype=np.int64)
    if old.shape != new.shape:
        raise InputError("ownership maps cover different id sets")
    return np.arange(old.shape[0], dtype=np.int64), old, new


def plan_migration(old_owner, new_owner, max_msg_size: int) -> MigrationPlan:
    """Messages of at most ``max_msg_size`` ids, packed greedily into rounds.

    Ownership maps are dicts ``id -> rank`` or arrays indexed by id. Within a
    round each ordered ``(src, dst)`` pair sends at most one message.
    """
    if max_msg_size < 1:
        raise InputError("max_msg_size must be >= 1")
    ids, old, new = _owner_arrays(old_owner, new_owner)
    plan = _plan_arrays(ids, old, new, max_msg_size)
    replay = plan.apply(old_owner)
    if isinstance(replay, dict):
        ok = replay == dict(new_owner)
    else:
        ok = np.array_equal(replay, new)
    if not ok:
        raise RuntimeError("migration plan does not reproduce the target ownership")
    return plan


def _plan_arrays(ids, old, new, cap) -> MigrationPlan:
    moving = np.flatnonzero(old != new)
    rounds: list[list[Message]] = []
    if moving.size == 0:
        return MigrationPlan(rounds, cap)
    src = old[moving]
    dst = new[moving]
    order = np.lexsort((moving, dst, src))
    src, dst, mv = src[order], dst[order], ids[moving[order]]
    bounds = np.flatnonzero((np.diff(src) != 0) | (np.diff(dst) != 0)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [mv.shape[0]]])
    for a, b in zip(starts.tolist(), stops.tolist()):
        s, d = int(src[a]), int(dst[a])
        chunk = mv[a:b].tolist()
        # first-fit: the j-th message of a pair cannot share a round with the (j-1)-th
        for j, off in enumerate(range(0, len(chunk), cap)):
            if j == len(rounds):
                rounds.append([])
            rounds[j].append(Message(s, d, tuple(chunk[off:off + cap])))
    return MigrationPlan(rounds, cap)


# ---------------------------------------------------------------------------
# metrics


def _edge_array(adjacency) -> np.ndarray:
    e = np.asarray(list(adjacency) if not isinstance(adjacency, np.ndarray) else adjacency,
                   dtype=np.float64)
    if e.size == 0:
        return np.empty((0, 3))
    if e.ndim != 2 or e.shape[1] not in (2, 3):
        raise InputError("edges must be (u, v) or (u, v, weight)")
    if e.shape[1] == 2:
        e = np.column_stack([e, np.ones(e.shape[0])])
    return e


def partition_quality(owner, adjacency=(), weights=None, nparts: int | None = None) -> QualityMetrics:
    """Load and communication metrics of an element partition.

    ``owner`` maps element index to rank (array or dict with integer keys);
    ``adjacency`` holds undirected ``(u, v[, w])`` edges. A cut edge counts
    toward the outgoing cut weight of both of its ranks.
    """
    if isinstance(owner, Mapping):
        keys = np.array(sorted(owner), dtype=np.int64)
        index = {k: i for i, k in enumerate(keys.tolist())}
        own = np.array([owner[k] for k in keys.tolist()], dtype=np.int64)
        edges = _edge_array(adjacency)
        try:
            uv = np.array([[index[int(u)], index[int(v)]] for u, v in edges[:, :2]],
                          dtype=np.int64).reshape(-1, 2)
        except KeyError as exc:
            raise InputError(f"edge endpoint {exc.args[0]} has no owner") from None
        if weights is not None and isinstance(weights, Mapping):
            weights = [weights[k] for k in keys.tolist()]
    else:
        own = np.asarray(owner, dtype=np.int64)
        edges = _edge_array(adjacency)
        uv = edges[:, :2].astype(np.int64)
        if uv.size and (uv.min() < 0 or uv.max() >= own.shape[0]):
            raise InputError("edge endpoint has no owner")
    w = np.ones(own.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    P = int(nparts if nparts is not None else (own.max() + 1 if own.size else 1))
    loads = np.bincount(own, weights=w, minlength=P)
    total = float(w.sum())
    if _is_integral(w):
        avg = int(total) // P
        max_load = int(loads.max())
        min_load = int(loads.min())
    else:
        avg, max_load, min_load = total / P, float(loads.max()), float(loads.min())

    ou = own[uv[:, 0]] if uv.size else np.empty(0, dtype=np.int64)
    ov = own[uv[:, 1]] if uv.size else np.empty(0, dtype=np.int64)
    cut = ou != ov
    ew = edges[:, 2]
    ecut = np.zeros(P)
    np.add.at(ecut, ou[cut], ew[cut])
    np.add.at(ecut, ov[cut], ew[cut])
    pairs = np.unique(np.concatenate([
        np.column_stack([ou[cut], ov[cut]]), np.column_stack([ov[cut], ou[cut]])]), axis=0)
    degree = np.bincount(pairs[:, 0], minlength=P) if pairs.size else np.zeros(P, dtype=np.int64)
    max_cut = float(ecut.max()) if P else 0.0
    if np.all(ew == np.floor(ew)):
        max_cut = int(max_cut)
    return QualityMetrics(P, avg, max_load, int(degree.max()), max_cut, min_load)


# ---------------------------------------------------------------------------
# files


def write_ownership(path, ids, ranks) -> None:
    atomic_write_lines(path, (f"{i} {r}" for i, r in zip(np.asarray(ids).tolist(),
                                                       np.asarray(ranks).tolist())))


def read_ownership(path) -> dict[int, int]:
    out: dict[int, int] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split()
            if not s or s[0].startswith("#"):
                continue
            if len(s) != 2:
                raise InputError(f"{path}:{lineno}: expected 'point_id rank'")
            out[int(s[0])] = int(s[1])
    return out


def write_metrics(path, metrics: QualityMetrics, partition_time: float | None = None,
                  with_edges: bool = True) -> None:
    atomic_write_lines(path, [metrics.to_line(partition_time, with_edges)])


def parse_metrics(text: str) -> dict[str, float]:
    out = {}
    for tok in text.split():
        k, _, v = tok.partition("=")
        out[k] = float("nan") if v == "NA" else float(v)
    return out
