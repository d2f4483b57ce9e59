"""Partitioned vectors, index sets and subset counting.

Index sets are 1-based tuples of strictly increasing integers, matching the
sensor numbering used throughout the package.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

IndexSet = tuple[int, ...]


@dataclass(frozen=True)
class BlockLayout:
    """Block sizes (n_1, ..., n_p) of a vector in R^N."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 1:
            raise ValueError("layout needs at least one block")
        if any(s < 1 for s in sizes):
            raise ValueError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def p(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(itertools.accumulate((0,) + self.sizes[:-1]))

    def block_slice(self, i: int) -> slice:
        """Slice of the 1-based block ``i`` inside the flat data."""
        if not 1 <= i <= self.p:
            raise IndexError(f"block {i} outside 1..{self.p}")
        start = self.offsets[i - 1]
        return slice(start, start + self.sizes[i - 1])

    def columns(self, I: Sequence[int]) -> np.ndarray:
        """Flat positions covered by the blocks in ``I`` (in order)."""
        check_index_set(I, self.p)
        return np.concatenate([np.arange(self.block_slice(i).start, self.block_slice(i).stop) for i in I]) \
            if len(I) else np.zeros(0, dtype=int)

    def sub(self, I: Sequence[int]) -> "BlockLayout":
        check_index_set(I, self.p)
        return BlockLayout(tuple(self.sizes[i - 1] for i in I))

    @classmethod
    def scalar(cls, p: int) -> "BlockLayout":
        return cls((1,) * p)


@dataclass(frozen=True)
class PartitionedVector:
    layout: BlockLayout
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float).reshape(-1)
        if data.size != self.layout.total:
            raise ValueError(f"data length {data.size} != layout total {self.layout.total}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def block(self, i: int) -> np.ndarray:
        return self.data[self.layout.block_slice(i)]

    def __len__(self):
        return self.data.size


def check_index_set(I: Sequence[int], p: int) -> IndexSet:
    I = tuple(int(i) for i in I)
    if any(b <= a for a, b in zip(I, I[1:])):
        raise ValueError(f"index set must be strictly increasing: {I}")
    if I and (I[0] < 1 or I[-1] > p):
        raise IndexError(f"index set {I} outside 1..{p}")
    return I


def zero_block_count(v: PartitionedVector) -> int:
    """Number of blocks with at least one exactly nonzero entry."""
    return sum(bool(np.any(v.block(i) != 0)) for i in range(1, v.layout.p + 1))


def project(v: PartitionedVector, I: Sequence[int]) -> PartitionedVector:
    I = check_index_set(I, v.layout.p)
    if not I:
        raise ValueError("cannot project onto the empty index set")
    return PartitionedVector(v.layout.sub(I), v.data[v.layout.columns(I)])


def inf_norm(v) -> float:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("infinity norm of an empty vector")
    return float(np.max(np.abs(v)))


def combinations(p: int, q: int) -> Iterator[IndexSet]:
    """All size-``q`` subsets of 1..p in lexicographic order."""
    if q < 0 or q > p:
        raise ValueError(f"need 0 <= q <= p, got p={p}, q={q}")
    return itertools.combinations(range(1, p + 1), q)


def subsets_of(group: Sequence[int], size: int) -> Iterator[IndexSet]:
    """Size-``size`` subsets of ``group`` (sorted) in lexicographic order."""
    group = tuple(sorted(group))
    if size < 0 or size > len(group):
        raise ValueError(f"need 0 <= size <= {len(group)}, got {size}")
    return itertools.combinations(group, size)


def binom(p: int, q: int) -> int:
    return math.comb(p, q)


def complexity_report(p: int, q: int, groups: Iterable[Sequence[int]]) -> dict[str, int]:
    """Subset counts for global identification vs. per-group identification."""
    groups = [check_index_set(sorted(g), p) for g in groups]
    covered = set().union(*map(set, groups)) if groups else set()
    if covered != set(range(1, p + 1)):
        missing = sorted(set(range(1, p + 1)) - covered)
        raise ValueError(f"groups do not cover 1..{p}; missing {missing}")
    if q < 0 or q > p:
        raise ValueError(f"need 0 <= q <= p, got q={q}")
    return {"global": binom(p, q), "local": sum(binom(len(g), q) for g in groups)}
