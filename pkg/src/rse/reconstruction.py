"""State recovery from identified subsets.

Left inverses are built as componentwise Lipschitz extensions over grid
anchors: w_c(z) = min_a (w_{a,c} + L ||z - z_a||_inf). Scenarios may also
register a closed-form inverse, which then drives the estimate while the
extension path is kept as a cross-check.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import IndexSet
from .identification import GroupPlan, MonitorResult
from .sampling import SampleGrid, iter_pairs, max_ratio

# relative inflation of estimated constants so anchors stay exactly reproduced
LIPSCHITZ_MARGIN = 1e-6


class InconsistentAnchorsError(ValueError):
    def __init__(self, a: int, b: int, implied: float, L: float):
        super().__init__(f"anchors {a} and {b} need L >= {implied:.6g} but L = {L:.6g}")
        self.pair = (a, b)
        self.implied = implied


@dataclass(frozen=True)
class AnchoredExtension:
    inputs: np.ndarray  # (A, d_in)
    outputs: np.ndarray  # (A, d_out)
    L: float

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.ndim == 2:
            return np.stack([self(row) for row in z])
        d = np.max(np.abs(self.inputs - z), axis=1)
        return np.min(self.outputs + self.L * d[:, None], axis=0)

    def __len__(self):
        return len(self.inputs)


def build_extension(inputs, outputs, L: float, tol: float = 1e-9, check: bool = True) -> AnchoredExtension:
    """Extension through the anchor pairs; rejects anchors that are not L-consistent."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    if len(inputs) != len(outputs) or len(inputs) == 0:
        raise ValueError("need the same positive number of input and output anchors")
    if L < 0:
        raise ValueError("Lipschitz constant must be non-negative")
    if check:
        for i, j in iter_pairs(len(inputs), cap=10**12):
            din = np.max(np.abs(inputs[i] - inputs[j]), axis=1)
            dout = np.max(np.abs(outputs[i] - outputs[j]), axis=1)
            excess = dout - (L * din + tol)
            if np.any(excess > 0):
                b = int(np.argmax(excess))
                implied = float(dout[b] / din[b]) if din[b] > 0 else float("inf")
                raise InconsistentAnchorsError(int(i[b]), int(j[b]), implied, L)
    inputs.setflags(write=False)
    outputs.setflags(write=False)
    return AnchoredExtension(inputs, outputs, float(L))


def fit_extension(inputs, outputs, margin: float = LIPSCHITZ_MARGIN) -> AnchoredExtension:
    """Extension with the smallest constant the anchors allow (plus a relative margin).

    Duplicate inputs are merged; they must carry identical outputs.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    _, keep = np.unique(inputs, axis=0, return_index=True)
    keep = np.sort(keep)
    L = max_ratio(inputs[keep], outputs[keep], cap=10**12) * (1 + margin)
    return build_extension(inputs[keep], outputs[keep], L)


@dataclass
class ReconstructionPlan:
    """Lazily built left inverses for each group's chosen subsets and for the stacked group maps."""

    plan: GroupPlan
    grid: SampleGrid
    analytic_inverse: Optional[Callable[[list, list], np.ndarray]] = None
    M_hat: dict = field(default_factory=dict)
    _group_ext: dict = field(default_factory=dict, repr=False)
    _inverse: Optional[AnchoredExtension] = field(default=None, repr=False)

    def group_extension(self, j: int, I: IndexSet) -> AnchoredExtension:
        """psi_{I_j}: Psi^j_{I_j}(x) -> Psi^j(x) over grid anchors."""
        key = (j, tuple(I))
        if key not in self._group_ext:
            psi = self.plan.psi[j - 1]
            full = self.grid.full_image(psi)
            rows = psi.layout.columns(self.plan.local_positions(j, I))
            self._group_ext[key] = fit_extension(full[:, rows], full)
        return self._group_ext[key]

    def inverse_extension(self) -> AnchoredExtension:
        """Psi^{-1}: col_j Psi^j(x) -> x over grid anchors."""
        if self._inverse is None:
            stacked = np.hstack([self.grid.full_image(m) for m in self.plan.psi])
            self._inverse = fit_extension(stacked, self.grid.points)
        return self._inverse

    def extensions(self) -> list[AnchoredExtension]:
        built = list(self._group_ext.values())
        if self._inverse is not None:
            built.append(self._inverse)
        return built


def recover_group(ext: AnchoredExtension, xi_identified, delta: float = 0.0,
                  M_hat: Optional[float] = None, slack: float = 0.0) -> tuple[np.ndarray, Optional[float]]:
    """psi_{I_j}(xi) and, when M_hat is known, the error bound (2M^2 + M) delta + slack."""
    value = ext(xi_identified)
    bound = None if M_hat is None else (2 * M_hat**2 + M_hat) * delta + slack
    return value, bound


def recover_state(rplan: ReconstructionPlan, identified: Sequence[np.ndarray], subsets: Sequence[IndexSet],
                  use_analytic: bool = True) -> np.ndarray:
    """State estimate from per-group identified values at one sample."""
    if len(identified) != rplan.plan.l or any(v is None for v in identified):
        raise ValueError("every group needs an identified estimate")
    if use_analytic and rplan.analytic_inverse is not None:
        return np.asarray(rplan.analytic_inverse(list(identified), list(subsets)), dtype=float)
    groups = [rplan.group_extension(j, I)(v) for j, (I, v) in enumerate(zip(subsets, identified), start=1)]
    return rplan.inverse_extension()(np.concatenate(groups))


@dataclass(frozen=True)
class StateEstimate:
    times: np.ndarray
    xhat: np.ndarray
    xhat_extension: Optional[np.ndarray] = None

    def errors(self, states) -> np.ndarray:
        return np.max(np.abs(self.xhat - states), axis=1)

    def to_csv(self, path, states=None) -> None:
        n = self.xhat.shape[1]
        header = ["t"] + [f"xhat_{k + 1}" for k in range(n)] + (["err_inf"] if states is not None else [])
        err = self.errors(states) if states is not None else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(v)) for v in self.xhat[k]]
                if err is not None:
                    row.append(repr(float(err[k])))
                w.writerow(row)


def reconstruct(rplan: ReconstructionPlan, mon: MonitorResult, with_extension: bool = True,
                extension_stride: int = 1) -> StateEstimate:
    K = len(mon.times)
    use_analytic = rplan.analytic_inverse is not None
    xs = []
    for k in range(K):
        subsets = [mon.chosen[j][k] for j in range(rplan.plan.l)]
        vals = [mon.identified[j][k] for j in range(rplan.plan.l)]
        xs.append(recover_state(rplan, vals, subsets, use_analytic=use_analytic))
    ext = None
    if with_extension and use_analytic:
        ext = np.full((K, len(xs[0])), np.nan)
        for k in range(0, K, extension_stride):
            subsets = [mon.chosen[j][k] for j in range(rplan.plan.l)]
            vals = [mon.identified[j][k] for j in range(rplan.plan.l)]
            ext[k] = recover_state(rplan, vals, subsets, use_analytic=False)
    return StateEstimate(times=mon.times, xhat=np.array(xs), xhat_extension=ext)
