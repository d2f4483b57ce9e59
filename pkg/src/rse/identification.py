"""Local attack identification.

For each sensor group P_j the monitor looks for a subset I_j of size
|P_j| - q whose estimates are consistent with the group's image set, either
by inf-norm distance to a sampled cloud (threshold delta + L*Delta) or, when
the image set lies in a known linear subspace, by the Euclidean residual of
the orthogonal projection (threshold delta * sqrt(dim)).

Subsets are always scanned in lexicographic order and the first passing one
is chosen.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import IndexSet, check_index_set, subsets_of
from .sampling import Cloud, SampleGrid, VectorMap, distance_to_cloud, estimate_lipschitz, image_cloud


class IdentificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Projection:
    """Lipschitz map T_i^j applied to one sensor's estimate."""

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    dim_out: int

    @classmethod
    def identity(cls, n: int) -> "Projection":
        return cls(func=lambda z: z, lipschitz=1.0, dim_out=n)

    @classmethod
    def linear(cls, T: np.ndarray) -> "Projection":
        T = np.atleast_2d(np.asarray(T, dtype=float))
        return cls(func=lambda z, T=T: z @ T.T, lipschitz=float(np.max(np.sum(np.abs(T), axis=1))),
                   dim_out=T.shape[0])


@dataclass
class GroupPlan:
    """Sensor groups, per-sensor projections and the group maps Psi^j.

    ``groups[j-1]`` lists global sensor numbers; the blocks of ``psi[j-1]``
    follow that order. ``bases[j-1]``, when given, is a matrix whose column
    space contains Psi^j(X) and enables the subspace test.
    """

    groups: list[IndexSet]
    psi: list[VectorMap]
    projections: dict[tuple[int, int], Projection] = field(default_factory=dict)
    bases: list[Optional[np.ndarray]] = field(default_factory=list)
    p: Optional[int] = None

    def __post_init__(self):
        self.groups = [tuple(sorted(g)) for g in self.groups]
        if len(self.psi) != len(self.groups):
            raise ValueError("need one group map per group")
        if not self.bases:
            self.bases = [None] * len(self.groups)
        p = self.p or max(max(g) for g in self.groups)
        self.p = p
        for g in self.groups:
            check_index_set(g, p)
        covered = set().union(*map(set, self.groups))
        if covered != set(range(1, p + 1)):
            raise ValueError(f"groups do not cover 1..{p}")
        for g, m in zip(self.groups, self.psi):
            if m.layout.p != len(g):
                raise ValueError(f"group map {m.id!r} has {m.layout.p} blocks for a group of {len(g)}")

    @property
    def l(self) -> int:
        return len(self.groups)

    def projection(self, j: int, i: int, n_i: int) -> Projection:
        return self.projections.get((j, i)) or Projection.identity(n_i)

    def local_positions(self, j: int, I: Sequence[int]) -> IndexSet:
        """Block positions (1-based within group j) of global sensors ``I``."""
        g = self.groups[j - 1]
        return tuple(g.index(i) + 1 for i in I)

    def local_estimate(self, j: int, zhat, layout) -> np.ndarray:
        """xi^j = col{T_i^j(zhat_i)}_{i in P_j} for one sample."""
        zhat = np.asarray(zhat, dtype=float)
        if not any(key[0] == j for key in self.projections):
            return zhat[layout.columns(self.groups[j - 1])]
        return np.concatenate([self.projection(j, i, layout.sizes[i - 1]).func(zhat[layout.block_slice(i)])
                               for i in self.groups[j - 1]])

    def delta_for_group(self, j: int, deltas: Sequence[float]) -> float:
        """delta^j = max_i L(T_i^j) delta_i over the group's sensors."""
        return max(self.projection(j, i, 1).lipschitz * deltas[i - 1] for i in self.groups[j - 1])


@dataclass(frozen=True)
class InspectionOutcome:
    group: int
    subset: IndexSet
    distance: float
    threshold: float
    passed: bool
    mode: str


@dataclass
class InspectionConfig:
    """``delta(t)`` returns per-sensor error bounds delta_i(t) (length p)."""

    q: int
    delta: Callable[[float], np.ndarray]
    grid: Optional[SampleGrid] = None
    mode: str = "auto"  # cloud | subspace | auto
    lipschitz: dict = field(default_factory=dict)  # (j, I) -> L estimate; filled lazily
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("cloud", "subspace", "auto"):
            raise ValueError(f"unknown inspection mode {self.mode!r}")
        if self.q < 0:
            raise ValueError("q must be non-negative")

    @classmethod
    def constant(cls, q: int, delta: float, p: int, **kw) -> "InspectionConfig":
        d = np.full(p, float(delta))
        return cls(q=q, delta=lambda t: d, **kw)


def resolve_threads(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("RSE_THREADS", default)))
    except ValueError:
        return default


# --- single inspections ------------------------------------------------------

def inspect_cloud(z_I, cloud: Cloud, delta: float, lipschitz: float, grid_delta: float,
                  group: int = 0, subset: IndexSet = ()) -> InspectionOutcome:
    """Pass iff d(z_I, cloud) <= delta + L * Delta."""
    d, _, _ = distance_to_cloud(z_I, cloud)
    thr = float(delta) + float(lipschitz) * float(grid_delta)
    return InspectionOutcome(group, tuple(subset), d, thr, d <= thr, "cloud")


@dataclass(frozen=True)
class SubspaceProjector:
    """I - O O^+ for a full-column-rank basis O."""

    residual_map: np.ndarray

    @classmethod
    def from_basis(cls, O: np.ndarray, rank_tol: float = 1e-10) -> "SubspaceProjector":
        O = np.atleast_2d(np.asarray(O, dtype=float))
        s = np.linalg.svd(O, compute_uv=False)
        if s.size == 0 or s[-1] <= rank_tol * s[0] or O.shape[1] > O.shape[0]:
            raise ValueError(f"basis of shape {O.shape} is rank deficient")
        # least-squares pseudo-inverse
        pinv = np.linalg.lstsq(O, np.eye(O.shape[0]), rcond=None)[0]
        return cls(np.eye(O.shape[0]) - O @ pinv)

    def residual(self, z) -> float:
        return float(np.linalg.norm(self.residual_map @ np.asarray(z, dtype=float)))


def inspect_subspace(z_I, basis_or_projector, delta: float, group: int = 0,
                     subset: IndexSet = ()) -> InspectionOutcome:
    """Pass iff ||(I - O O^+) z_I||_2 <= delta * sqrt(dim z_I)."""
    proj = basis_or_projector if isinstance(basis_or_projector, SubspaceProjector) \
        else SubspaceProjector.from_basis(basis_or_projector)
    z = np.asarray(z_I, dtype=float).reshape(-1)
    r = proj.residual(z)
    thr = float(delta) * math.sqrt(z.size)
    return InspectionOutcome(group, tuple(subset), r, thr, r <= thr, "subspace")


# --- engine ------------------------------------------------------------------

class Inspector:
    """Caches clouds, Lipschitz estimates and projectors for a plan."""

    def __init__(self, plan: GroupPlan, cfg: InspectionConfig, layout):
        self.plan = plan
        self.cfg = cfg
        self.layout = layout
        self._projectors: dict = {}
        self._rows: dict = {}
        for j, g in enumerate(plan.groups, start=1):
            if cfg.q >= len(g):
                raise ValueError(f"q={cfg.q} must be smaller than group {j} size {len(g)}")
        self.modes = [self._mode_for(j) for j in range(1, plan.l + 1)]
        self.scans = 0

    def _mode_for(self, j: int) -> str:
        has_basis = self.plan.bases[j - 1] is not None
        if self.cfg.mode == "subspace" and not has_basis:
            raise ValueError(f"group {j} has no subspace basis for subspace mode")
        if self.cfg.mode == "cloud" or (self.cfg.mode == "auto" and not has_basis):
            if self.cfg.grid is None:
                raise ValueError("cloud mode needs a sample grid")
            return "cloud"
        return "subspace"

    def subsets(self, j: int) -> list[IndexSet]:
        g = self.plan.groups[j - 1]
        return list(subsets_of(g, len(g) - self.cfg.q))

    def rows(self, j: int, I: IndexSet) -> np.ndarray:
        key = (j, I)
        if key not in self._rows:
            self._rows[key] = self.plan.psi[j - 1].layout.columns(self.plan.local_positions(j, I))
        return self._rows[key]

    def lipschitz(self, j: int, I: IndexSet) -> float:
        key = (j, I)
        if key not in self.cfg.lipschitz:
            self.cfg.lipschitz[key] = estimate_lipschitz(self.plan.psi[j - 1], self.plan.local_positions(j, I),
                                                         self.cfg.grid)
        return self.cfg.lipschitz[key]

    def projector(self, j: int, I: IndexSet) -> SubspaceProjector:
        key = (j, I)
        if key not in self._projectors:
            self._projectors[key] = SubspaceProjector.from_basis(self.plan.bases[j - 1][self.rows(j, I)])
        return self._projectors[key]

    def inspect(self, j: int, I: IndexSet, xi_j: np.ndarray, delta_j: float) -> InspectionOutcome:
        self.scans += 1
        z_I = xi_j[self.rows(j, I)]
        if self.modes[j - 1] == "subspace":
            return inspect_subspace(z_I, self.projector(j, I), delta_j, group=j, subset=I)
        cloud = image_cloud(self.cfg.grid, self.plan.psi[j - 1], self.plan.local_positions(j, I))
        return inspect_cloud(z_I, cloud, delta_j, self.lipschitz(j, I), self.cfg.grid.delta, group=j, subset=I)

    def identify_group(self, j: int, xi_j: np.ndarray, delta_j: float) -> tuple[Optional[IndexSet], list]:
        """First passing subset in lexicographic order, with the outcomes scanned."""
        outcomes = []
        subsets = self.subsets(j)
        threads = max(1, self.cfg.threads)
        if threads == 1:
            for I in subsets:
                out = self.inspect(j, I, xi_j, delta_j)
                outcomes.append(out)
                if out.passed:
                    return I, outcomes
            return None, outcomes
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for start in range(0, len(subsets), threads):
                batch = subsets[start:start + threads]
                results = list(pool.map(lambda I: self.inspect(j, I, xi_j, delta_j), batch))
                for out in results:
                    outcomes.append(out)
                    if out.passed:
                        return out.subset, outcomes
        return None, outcomes


@dataclass
class GroupIdentification:
    group: int
    subset: Optional[IndexSet]
    outcomes: list

    @property
    def scanned(self) -> int:
        return len(self.outcomes)


def local_estimates(plan: GroupPlan, zhat, layout) -> list[np.ndarray]:
    return [plan.local_estimate(j, zhat, layout) for j in range(1, plan.l + 1)]


def identify_once(zhat, plan: GroupPlan, cfg: InspectionConfig, t: float, layout,
                  inspector: Optional[Inspector] = None) -> list[GroupIdentification]:
    """Per group, the first passing subset of size |P_j| - q (None if none passes)."""
    insp = inspector or Inspector(plan, cfg, layout)
    deltas = np.asarray(cfg.delta(t))
    result = []
    for j, xi in enumerate(local_estimates(plan, zhat, layout), start=1):
        I, outs = insp.identify_group(j, xi, plan.delta_for_group(j, deltas))
        result.append(GroupIdentification(j, I, outs))
    return result


# --- monitor -----------------------------------------------------------------

@dataclass
class MonitorResult:
    times: np.ndarray
    groups: list[IndexSet]
    chosen: list[list[Optional[IndexSet]]]  # chosen[j-1][k]
    identified: list[np.ndarray]  # per group (K, dim) values xi_{I_j}(t_k)
    local: list[np.ndarray]  # per group (K, dim P_j) local estimates xi^j(t_k)
    residuals: list[np.ndarray]  # per group distance of the current subset at each sample
    thresholds: list[np.ndarray]
    events: list[dict]
    flagged: np.ndarray  # (K, l) samples where no subset passed
    initial: list[Optional[IndexSet]]
    epoch_scans: list[int]  # subsets scanned per re-identification (all groups at that sample)

    def switches(self, group: Optional[int] = None) -> list[dict]:
        return [e for e in self.events if e["event"] == "switch" and (group is None or e["group"] == group)]

    def failures(self, group: Optional[int] = None) -> list[dict]:
        return [e for e in self.events if e["event"] == "fail" and (group is None or e["group"] == group)]

    def first_failure_time(self, group: int) -> Optional[float]:
        f = self.failures(group)
        return f[0]["t"] if f else None

    def last_switch_time(self) -> Optional[float]:
        s = self.switches()
        return s[-1]["t"] if s else None

    @property
    def exhausted(self) -> bool:
        return bool(self.flagged.any())

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.events:
                fh.write(json.dumps(e) + "\n")


def monitor_run(stream, plan: GroupPlan, cfg: InspectionConfig, log_passes: bool = False,
                log_scans: bool = True) -> MonitorResult:
    """Keep each group's subset while it passes; re-identify on failure.

    When no subset passes, the last subset is held and the sample is flagged.
    """
    layout = stream.layout
    insp = Inspector(plan, cfg, layout)
    times = stream.times
    K, l = len(times), plan.l
    chosen = [[None] * K for _ in range(l)]
    dims = [len(insp.rows(j, insp.subsets(j)[0])) for j in range(1, l + 1)]
    identified = [np.empty((K, d)) for d in dims]
    local = [np.empty((K, m.dim_out)) for m in plan.psi]
    residuals = [np.empty(K) for _ in range(l)]
    thresholds = [np.empty(K) for _ in range(l)]
    flagged = np.zeros((K, l), dtype=bool)
    events: list[dict] = []
    epoch_scans: list[int] = []
    current: list[Optional[IndexSet]] = [None] * l
    initial: list[Optional[IndexSet]] = [None] * l

    def log(t, j, kind, out: Optional[InspectionOutcome], subset, scanned=None, **extra):
        e = {"t": float(t), "group": j, "event": kind, "subset": list(subset) if subset else None,
             "distance": None if out is None else out.distance,
             "threshold": None if out is None else out.threshold,
             "subsets_scanned": scanned}
        e.update(extra)
        events.append(e)

    for k, t in enumerate(times):
        deltas = np.asarray(cfg.delta(t))
        xis = local_estimates(plan, stream.values[k], layout)
        scans_here = 0
        for j in range(1, l + 1):
            xi = xis[j - 1]
            dj = plan.delta_for_group(j, deltas)
            local[j - 1][k] = xi
            I = current[j - 1]
            if I is None:
                I, outs = insp.identify_group(j, xi, dj)
                scans_here += len(outs)
                if I is None:
                    I = insp.subsets(j)[0]
                    flagged[k, j - 1] = True
                    log(t, j, "fail", outs[-1], None, len(outs), exhausted=True)
                current[j - 1] = initial[j - 1] = I
                out = insp.inspect(j, I, xi, dj)
            else:
                out = insp.inspect(j, I, xi, dj)
                if out.passed:
                    if log_passes:
                        log(t, j, "pass", out, I)
                else:
                    log(t, j, "fail", out, I)
                    newI, outs = insp.identify_group(j, xi, dj)
                    scans_here += len(outs)
                    if log_scans:
                        for o in outs:
                            if not o.passed and o.subset != I:
                                log(t, j, "fail", o, o.subset, scan=True)
                    if newI is None:
                        flagged[k, j - 1] = True
                        log(t, j, "fail", None, None, len(outs), exhausted=True)
                    else:
                        passed = outs[-1]
                        log(t, j, "switch", passed, newI, len(outs), previous=list(I))
                        current[j - 1] = newI
                        out = passed
            I = current[j - 1]
            chosen[j - 1][k] = I
            identified[j - 1][k] = xi[insp.rows(j, I)]
            residuals[j - 1][k] = out.distance
            thresholds[j - 1][k] = out.threshold
        if scans_here and k > 0:
            epoch_scans.append(scans_here)
    return MonitorResult(times=times, groups=plan.groups, chosen=chosen, identified=identified, local=local,
                         residuals=residuals, thresholds=thresholds, events=events, flagged=flagged,
                         initial=initial, epoch_scans=epoch_scans)
