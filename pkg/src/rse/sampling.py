"""Finite covers of compact state sets and the point clouds they induce.

All distances are infinity norms. Maps are evaluated in batch: a
``VectorMap.func`` takes an array whose last axis is the state and returns an
array whose last axis is the stacked block output.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import BlockLayout, PartitionedVector, check_index_set

DEFAULT_POINT_CAP = 10**7
DEFAULT_PAIR_CAP = 2 * 10**6


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box bounds must be non-empty and of equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"box needs lo < hi per coordinate: {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.lo) + np.array(self.hi)) / 2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lo), np.array(self.hi)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        lo, hi = self.bounds()
        x = np.asarray(x, dtype=float)
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)

    def scaled(self, factor: float) -> "Box":
        c = self.center
        half = (np.array(self.hi) - np.array(self.lo)) / 2 * factor
        return Box(tuple(c - half), tuple(c + half))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo, hi = self.bounds()
        return rng.uniform(lo, hi, size=(size, self.dim))


@dataclass(frozen=True)
class InfBall:
    center_point: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center_point", tuple(float(v) for v in self.center_point))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center_point)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.center_point)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.max(np.abs(x - self.center), axis=-1) <= self.radius + tol

    def scaled(self, factor: float) -> "InfBall":
        return InfBall(self.center_point, self.radius * factor)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo, hi = self.bounds()
        return rng.uniform(lo, hi, size=(size, self.dim))


CompactSet = Box | InfBall


@dataclass(frozen=True)
class VectorMap:
    """A block-valued map x -> col{Phi_i(x)} with a declared output layout."""

    id: str
    dim_in: int
    layout: BlockLayout
    func: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def dim_out(self) -> int:
        return self.layout.total

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.func(x), dtype=float)
        if out.shape[-1] != self.dim_out:
            raise ValueError(f"map {self.id!r} returned {out.shape[-1]} outputs, layout declares {self.dim_out}")
        return out

    def evaluate(self, x) -> PartitionedVector:
        return PartitionedVector(self.layout, self(x))

    def jac(self, x, step: float = 1e-6) -> np.ndarray:
        """Jacobian at a single state; central differences when no analytic form is given."""
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        h = step * np.maximum(1.0, np.abs(x))
        cols = []
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = h[k]
            cols.append((self(x + e) - self(x - e)) / (2 * h[k]))
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Cloud:
    """Projected images pi_I(map(x)) over grid states x, row-aligned."""

    layout: BlockLayout
    points: np.ndarray
    states: np.ndarray

    def __len__(self):
        return len(self.points)

    def to_csv(self, path) -> None:
        n, m = self.states.shape[1], self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"state_{k + 1}" for k in range(n)] + [f"image_{k + 1}" for k in range(m)])
            for s, z in zip(self.states, self.points):
                w.writerow([repr(float(v)) for v in s] + [repr(float(v)) for v in z])


@dataclass
class SampleGrid:
    spec: CompactSet
    delta: float
    points: np.ndarray
    _images: dict = field(default_factory=dict, repr=False)
    _full: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.points)

    def full_image(self, vmap: VectorMap) -> np.ndarray:
        if vmap.id not in self._full:
            try:
                img = vmap(self.points)
            except Exception as exc:
                bad = _first_failing_state(vmap, self.points)
                raise RuntimeError(f"map {vmap.id!r} failed at state {bad}") from exc
            if not np.all(np.isfinite(img)):
                bad = self.points[~np.all(np.isfinite(img), axis=1)][0]
                raise RuntimeError(f"map {vmap.id!r} produced non-finite output at state {bad}")
            img.setflags(write=False)
            self._full[vmap.id] = img
        return self._full[vmap.id]


def _first_failing_state(vmap, points):
    for x in points:
        try:
            vmap(x)
        except Exception:
            return x
    return None


def _axis_centers(lo: float, hi: float, delta: float) -> np.ndarray:
    width = hi - lo
    m = max(1, math.ceil(width / (2 * delta) - 1e-12))
    # centered lattice with spacing 2*delta; end gaps are at most delta
    first = lo + (width - 2 * delta * (m - 1)) / 2
    return first + 2 * delta * np.arange(m)


def build_grid(spec: CompactSet, delta: float, cap: int = DEFAULT_POINT_CAP) -> SampleGrid:
    """Cell-center lattice with spacing 2*delta; every set point is within delta (inf-norm)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    lo, hi = spec.bounds()
    axes = [_axis_centers(a, b, delta) for a, b in zip(lo, hi)]
    count = math.prod(len(a) for a in axes)
    if count > cap:
        raise ValueError(f"grid would have {count} points (cap {cap}); delta={delta} is too small")
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    points = points[spec.contains(points)]
    if isinstance(spec, InfBall) and not np.any(np.all(points == spec.center, axis=1)):
        points = np.vstack([points, spec.center])
    points.setflags(write=False)
    return SampleGrid(spec=spec, delta=float(delta), points=points)


def image_cloud(grid: SampleGrid, vmap: VectorMap, I: Optional[Sequence[int]] = None) -> Cloud:
    """Cached cloud {pi_I(map(x)) : x in grid}; ``I=None`` means all blocks."""
    I = tuple(range(1, vmap.layout.p + 1)) if I is None else check_index_set(I, vmap.layout.p)
    key = (vmap.id, I)
    if key not in grid._images:
        full = grid.full_image(vmap)
        pts = full[:, vmap.layout.columns(I)]
        pts.setflags(write=False)
        grid._images[key] = Cloud(vmap.layout.sub(I), pts, grid.points)
    return grid._images[key]


def distance_to_cloud(z, cloud: Cloud) -> tuple[float, np.ndarray, int]:
    """Inf-norm distance from ``z`` to the cloud, the nearest source state and its row.

    Ties resolve to the earliest grid point.
    """
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    z = z.data if isinstance(z, PartitionedVector) else np.asarray(z, dtype=float).reshape(-1)
    if z.size != cloud.points.shape[1]:
        raise ValueError(f"vector of length {z.size} vs cloud dimension {cloud.points.shape[1]}")
    d = np.max(np.abs(cloud.points - z), axis=1)
    k = int(np.argmin(d))
    return float(d[k]), cloud.states[k], k


def iter_pairs(n: int, cap: int = DEFAULT_PAIR_CAP, seed: int = 0, chunk: int = 500_000):
    """Yield (i, j) index arrays over distinct pairs i < j.

    Exhaustive when n(n-1)/2 <= cap, otherwise ``cap`` pairs drawn with a
    seeded generator.
    """
    total = n * (n - 1) // 2
    if total == 0:
        return
    if total <= cap:
        rows = []
        size = 0
        for i in range(n - 1):
            rows.append(i)
            size += n - 1 - i
            if size >= chunk:
                yield _pairs_for_rows(rows, n)
                rows, size = [], 0
        if rows:
            yield _pairs_for_rows(rows, n)
    else:
        rng = np.random.default_rng(seed)
        done = 0
        while done < cap:
            m = min(chunk, cap - done)
            i = rng.integers(0, n, size=m)
            j = rng.integers(0, n - 1, size=m)
            j = j + (j >= i)
            yield np.minimum(i, j), np.maximum(i, j)
            done += m


def _pairs_for_rows(rows, n):
    ii = np.concatenate([np.full(n - 1 - i, i) for i in rows])
    jj = np.concatenate([np.arange(i + 1, n) for i in rows])
    return ii, jj


def max_ratio(inputs: np.ndarray, outputs: np.ndarray, cap: int = DEFAULT_PAIR_CAP, seed: int = 0) -> float:
    """max over pairs of ||out_a - out_b|| / ||in_a - in_b|| (pairs with equal inputs skipped)."""
    best = 0.0
    for i, j in iter_pairs(len(inputs), cap=cap, seed=seed):
        den = np.max(np.abs(inputs[i] - inputs[j]), axis=1)
        num = np.max(np.abs(outputs[i] - outputs[j]), axis=1) if outputs.shape[1] else np.zeros_like(den)
        ok = den > 0
        if np.any(ok):
            best = max(best, float(np.max(num[ok] / den[ok])))
    return best


def estimate_lipschitz(vmap: VectorMap, I: Optional[Sequence[int]], grid: SampleGrid,
                       cap: int = DEFAULT_PAIR_CAP, seed: int = 0) -> float:
    """Grid lower bound on the Lipschitz constant of pi_I o map (inf-norms)."""
    if len(grid) < 2:
        raise ValueError("need at least two grid points")
    cloud = image_cloud(grid, vmap, I)
    return max_ratio(grid.points, cloud.points, cap=cap, seed=seed)
