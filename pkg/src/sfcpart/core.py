"""Domain types, normalization, synthetic generators and point-file I/O."""

from __future__ import annotations

import functools
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class InputError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class WeightedPoint:
    id: int
    weight: float
    coords: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise InputError("box corners differ in dimension")
        if np.any(lo > hi):
            raise InputError("box has lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def _raw(cls, lo: np.ndarray, hi: np.ndarray) -> "BoundingBox":
        """Build from float64 corners already known to be valid (skips checks)."""
        box = object.__new__(cls)
        object.__setattr__(box, "lo", lo)
        object.__setattr__(box, "hi", hi)
        return box

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @functools.cached_property
    def bounds(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Corners as plain tuples, for scalar hot paths."""
        return tuple(self.lo.tolist()), tuple(self.hi.tolist())

    def contains(self, coords) -> bool:
        lo, hi = self.bounds
        for a, x, b in zip(lo, coords, hi):
            if x < a or x > b:
                return False
        return True

    def contains_box(self, other: "BoundingBox") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def expanded(self, coords) -> "BoundingBox":
        c = np.asarray(coords, dtype=np.float64)
        return BoundingBox(np.minimum(self.lo, c), np.maximum(self.hi, c))

    def __eq__(self, other):
        if not isinstance(other, BoundingBox):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self):
        return f"BoundingBox(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


@dataclass(frozen=True, eq=False)
class Normalization:
    """Affine map taking a domain box onto the unit hypercube."""

    lo: np.ndarray
    width: np.ndarray

    def apply(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=np.float64)
        flat = self.width == 0
        safe = np.where(flat, 1.0, self.width)
        out = (c - self.lo) / safe
        return np.where(flat, 0.5, out)


@dataclass(eq=False)
class Dataset:
    """Column-oriented collection of weighted points.

    ``ids`` are unique unsigned integers, ``weights`` non-negative and
    ``coords`` an ``(n, d)`` array of finite reals.
    """

    ids: np.ndarray
    weights: np.ndarray
    coords: np.ndarray
    domain_box: BoundingBox | None = None
    mapping: Normalization | None = field(default=None, repr=False)

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64).reshape(-1)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim == 1:
            coords = coords.reshape(-1, 1)
        self.coords = np.ascontiguousarray(coords)
        n = self.ids.shape[0]
        if n == 0:
            raise InputError("empty input")
        if self.weights.shape[0] != n or self.coords.shape[0] != n:
            raise InputError("ids, weights and coords differ in length")
        if self.coords.shape[1] < 1:
            raise InputError("dimension must be >= 1")
        if np.any(self.ids < 0):
            raise InputError("ids must be unsigned")
        if np.unique(self.ids).shape[0] != n:
            raise InputError("duplicate point ids")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise InputError("weights must be finite and non-negative")
        if not np.all(np.isfinite(self.coords)):
            raise InputError("coordinates must be finite")
        tight = _bbox_arrays(self.coords)
        if self.domain_box is None:
            self.domain_box = tight
        elif not self.domain_box.contains_box(tight):
            raise InputError("domain box does not cover all points")

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.ids.shape[0]

    @property
    def points(self) -> list[WeightedPoint]:
        return [
            WeightedPoint(int(i), float(w), tuple(float(v) for v in c))
            for i, w, c in zip(self.ids, self.weights, self.coords)
        ]

    @classmethod
    def from_points(cls, points: Sequence[WeightedPoint]) -> "Dataset":
        if not points:
            raise InputError("empty input")
        d = len(points[0].coords)
        if any(len(p.coords) != d for p in points):
            raise InputError("points differ in dimension")
        return cls(
            ids=[p.id for p in points],
            weights=[p.weight for p in points],
            coords=np.array([p.coords for p in points], dtype=np.float64).reshape(len(points), d),
        )


def _bbox_arrays(coords: np.ndarray) -> BoundingBox:
    return BoundingBox(coords.min(axis=0), coords.max(axis=0))


def bbox(points) -> BoundingBox:
    """Tight box around a sequence of points or an ``(n, d)`` coordinate array."""
    if isinstance(points, Dataset):
        return _bbox_arrays(points.coords)
    if isinstance(points, np.ndarray):
        if points.size == 0:
            raise InputError("bbox of empty sequence")
        return _bbox_arrays(points.reshape(points.shape[0], -1))
    pts = list(points)
    if not pts:
        raise InputError("bbox of empty sequence")
    coords = np.array([p.coords if isinstance(p, WeightedPoint) else p for p in pts], dtype=np.float64)
    return _bbox_arrays(coords.reshape(len(pts), -1))


def normalize(ds: Dataset) -> Dataset:
    """Map every coordinate affinely into [0, 1] using the domain box.

    Zero-width dimensions map to 0.5. The returned dataset keeps the map in
    ``mapping`` so query points can be transformed identically.
    """
    if ds is None or len(ds) == 0:
        raise InputError("empty input")
    box = ds.domain_box
    mapping = Normalization(box.lo.copy(), box.widths.copy())
    unit = mapping.apply(ds.coords)
    # guard against 1-ulp overshoot from the division
    np.clip(unit, 0.0, 1.0, out=unit)
    return Dataset(ds.ids.copy(), ds.weights.copy(), unit, mapping=mapping)


def generate(dist: str, n: int, d: int, seed: int, *, cluster_fraction: float = 0.5,
             cluster_rate: float = 8.0) -> Dataset:
    """Synthetic unit-weight points in the unit cube.

    ``clustered`` draws ``cluster_fraction`` of the points from a radial
    exponential-decay cluster anchored at the origin corner; the rest are
    uniform.
    """
    if n < 1 or d < 1:
        raise InputError("n and d must be >= 1")
    if dist not in ("uniform", "clustered"):
        raise InputError(f"unknown distribution {dist!r}")
    if not 0.0 <= cluster_fraction <= 1.0 or cluster_rate <= 0:
        raise InputError("invalid cluster parameters")
    rng = np.random.default_rng(seed)
    coords = rng.random((n, d))
    if dist == "clustered":
        m = int(round(cluster_fraction * n))
        coords[:m] = _corner_cluster(rng, m, d, cluster_rate)
    return Dataset(np.arange(n, dtype=np.int64), np.ones(n), coords)


def _corner_cluster(rng: np.random.Generator, m: int, d: int, rate: float) -> np.ndarray:
    out = np.empty((m, d))
    filled = 0
    while filled < m:
        k = m - filled
        direction = np.abs(rng.standard_normal((k, d)))
        norm = np.linalg.norm(direction, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        radius = rng.exponential(1.0 / rate, size=(k, 1))
        pts = direction / norm * radius
        ok = np.all(pts <= 1.0, axis=1)
        take = pts[ok]
        out[filled:filled + take.shape[0]] = take
        filled += take.shape[0]
    return out


# ---------------------------------------------------------------------------
# file I/O


def read_points(path) -> Dataset:
    """Read ``id weight c0 ... c(d-1)`` lines; ``#`` lines are comments."""
    ids, weights, rows = [], [], []
    d = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) < 3:
                raise InputError(f"{path}:{lineno}: expected 'id weight c0 ...'")
            if d is None:
                d = len(parts) - 2
            elif len(parts) - 2 != d:
                raise InputError(f"{path}:{lineno}: expected {d} coordinates, got {len(parts) - 2}")
            try:
                ids.append(int(parts[0]))
                weights.append(float(parts[1]))
                rows.append([float(v) for v in parts[2:]])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if not ids:
        raise InputError("empty input")
    return Dataset(np.array(ids), np.array(weights), np.array(rows).reshape(len(ids), d))


def write_points(path, ds: Dataset) -> None:
    lines = (
        f"{i} {_fmt(w)} " + " ".join(_fmt(v) for v in c)
        for i, w, c in zip(ds.ids.tolist(), ds.weights.tolist(), ds.coords.tolist())
    )
    atomic_write_lines(path, lines)


def _fmt(x: float) -> str:
    return repr(float(x))


def atomic_write_lines(path, lines: Iterable[str]) -> None:
    """Write lines to a sibling temp file and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
