"""Grid-relative k-redundancy checks for block maps.

A map is k-redundant when any p-k of its blocks determine all p blocks on
the domain. Over a finite grid this becomes: no pair of grid states has
nearly equal images on some p-k blocks (within ``eps_match``) while their
full images are clearly apart (more than ``eps_sep``).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import IndexSet, combinations
from .sampling import DEFAULT_PAIR_CAP, SampleGrid, VectorMap, estimate_lipschitz, iter_pairs


class NotRedundantError(ValueError):
    pass


@dataclass
class RedundancyVerdict:
    k: int
    holds: bool
    witness: Optional[dict] = None
    M_hat: Optional[float] = None
    tolerances: dict = field(default_factory=dict)
    grid_delta: Optional[float] = None
    subsets_checked: int = 0
    notes: str = "grid-relative verdict; M_hat is a lower bound of the true constant"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(type(v))


def _block_pair_distances(images: np.ndarray, layout, i, j) -> np.ndarray:
    """(pairs, p) matrix of per-block inf-norm distances."""
    diff = np.abs(images[i] - images[j])
    return np.stack([diff[:, layout.block_slice(b)].max(axis=1) for b in range(1, layout.p + 1)], axis=1)


def default_tolerances(vmap: VectorMap, grid: SampleGrid, I: IndexSet) -> tuple[float, float]:
    eps_match = 2.0 * estimate_lipschitz(vmap, I, grid) * grid.delta
    return eps_match, 10.0 * eps_match


def check_k_redundant(vmap: VectorMap, grid: SampleGrid, k: int, eps_match: Optional[float] = None,
                      eps_sep: Optional[float] = None, with_M: bool = False,
                      pair_cap: int = DEFAULT_PAIR_CAP) -> RedundancyVerdict:
    """Search the grid for a pair that the blocks in some |I| = p-k cannot tell apart.

    Without explicit tolerances each subset uses eps_match = 2 L(Phi_I) Delta and
    eps_sep = 10 eps_match.
    """
    p = vmap.layout.p
    if not 0 <= k < p:
        raise ValueError(f"need 0 <= k < p = {p}")
    if eps_match is not None and eps_sep is not None and not eps_sep > eps_match >= 0:
        raise ValueError("need eps_sep > eps_match >= 0")
    subsets = list(combinations(p, p - k))
    tol = {}
    for I in subsets:
        if eps_match is None or eps_sep is None:
            m, s = default_tolerances(vmap, grid, I)
            tol[I] = (m if eps_match is None else eps_match, s if eps_sep is None else eps_sep)
        else:
            tol[I] = (eps_match, eps_sep)
    verdict = RedundancyVerdict(k=k, holds=True, grid_delta=grid.delta, subsets_checked=len(subsets),
                                tolerances={",".join(map(str, I)): {"eps_match": t[0], "eps_sep": t[1]}
                                            for I, t in tol.items()})
    if k == 0:
        if with_M:
            verdict.M_hat = 1.0
        return verdict
    images = grid.full_image(vmap)
    cols = [np.array(I) - 1 for I in subsets]
    for i, j in iter_pairs(len(grid), cap=pair_cap):
        D = _block_pair_distances(images, vmap.layout, i, j)
        full = D.max(axis=1)
        for I, c in zip(subsets, cols):
            m, s = tol[I]
            part = D[:, c].max(axis=1)
            bad = np.flatnonzero((part <= m) & (full > s))
            if bad.size:
                b = bad[0]
                verdict.holds = False
                verdict.witness = {"x1": grid.points[i[b]].tolist(), "x2": grid.points[j[b]].tolist(),
                                   "I": list(I), "subset_distance": float(part[b]),
                                   "full_distance": float(full[b])}
                return verdict
    if with_M:
        verdict.M_hat = estimate_M(vmap, grid, k, pair_cap=pair_cap)
    return verdict


def estimate_M(vmap: VectorMap, grid: SampleGrid, k: int, pair_cap: int = DEFAULT_PAIR_CAP,
               zero_tol: float = 1e-12) -> float:
    """Grid lower bound on the redundancy constant M: max ||dPhi|| / ||dPhi_I|| over |I| = p-k.

    Distances below ``zero_tol`` times the image scale count as zero; pairs
    whose restricted images coincide must then coincide in full.
    """
    p = vmap.layout.p
    if not 0 <= k < p:
        raise ValueError(f"need 0 <= k < p = {p}")
    images = grid.full_image(vmap)
    atol = zero_tol * max(1.0, float(np.max(np.abs(images))) if images.size else 1.0)
    cols = [np.array(I) - 1 for I in combinations(p, p - k)]
    best = 0.0
    for i, j in iter_pairs(len(grid), cap=pair_cap):
        D = _block_pair_distances(images, vmap.layout, i, j)
        full = D.max(axis=1)
        for c in cols:
            part = D[:, c].max(axis=1)
            zero = part <= atol
            clash = zero & (full > atol)
            if np.any(clash):
                b = np.flatnonzero(clash)[0]
                raise NotRedundantError(
                    f"blocks {tuple(int(v) for v in c + 1)} agree at {grid.points[i[b]]} and "
                    f"{grid.points[j[b]]} but the full images differ by {full[b]:.3g}")
            ok = ~zero
            if np.any(ok):
                best = max(best, float(np.max(full[ok] / part[ok])))
    return best


def numerical_rank(J: np.ndarray, rank_tol: float, scale: float) -> int:
    if J.size == 0 or scale == 0:
        return 0
    s = np.linalg.svd(J, compute_uv=False)
    return int(np.sum(s > rank_tol * scale))


def check_rank_criterion(vmap: VectorMap, grid: SampleGrid, k: int, rank_tol: float = 1e-8) -> RedundancyVerdict:
    """Jacobian rank test: rank DPhi_I(x) == rank DPhi(x) for every grid x and |I| = p-k.

    Singular values count when above rank_tol times the largest singular value of DPhi(x).
    """
    p = vmap.layout.p
    if not 0 <= k < p:
        raise ValueError(f"need 0 <= k < p = {p}")
    subsets = list(combinations(p, p - k))
    rows = [vmap.layout.columns(I) for I in subsets]
    verdict = RedundancyVerdict(k=k, holds=True, grid_delta=grid.delta, subsets_checked=len(subsets),
                                tolerances={"rank_tol": rank_tol},
                                notes="Jacobian rank criterion on grid points")
    for x in grid.points:
        try:
            J = vmap.jac(x)
        except Exception as exc:
            raise RuntimeError(f"Jacobian of {vmap.id!r} failed at {x}") from exc
        smax = float(np.linalg.norm(J, 2)) if J.size else 0.0
        full_rank = numerical_rank(J, rank_tol, smax)
        for I, r in zip(subsets, rows):
            if numerical_rank(J[r], rank_tol, smax) != full_rank:
                verdict.holds = False
                verdict.witness = {"x": x.tolist(), "I": list(I)}
                return verdict
    return verdict
