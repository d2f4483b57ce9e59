"""Sensor groups for linear plants from the spectral decomposition of A.

Eigenvalues of A are clustered into pairwise coprime factors of the
characteristic polynomial; each factor's generalized eigenspace (kernel of
gamma_j(A)) gives a sub-state. A sensor joins group j when its observability
matrix restricted to that sub-state is nonzero, and its canonical
coordinates are rotated so that each group sees only its own sub-state.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BlockLayout, IndexSet, complexity_report, combinations
from .identification import GroupPlan, Projection
from .sampling import VectorMap
from .scenarios import observability_matrix

CONDITION_WARNING = 1e8


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if C.shape[1] != A.shape[0]:
            raise ValueError(f"C has {C.shape[1]} columns for a {A.shape[0]}-state system")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]


def factor_relprime(A, cluster_tol: float = 1e-6) -> list[np.ndarray]:
    """Eigenvalue clusters (with multiplicity) forming pairwise coprime real factors.

    Eigenvalues closer than ``cluster_tol`` (relative) share a cluster and a
    complex eigenvalue always shares a cluster with its conjugate. Clusters are
    ordered by decreasing real part, then by imaginary magnitude.
    """
    lam = np.linalg.eigvals(np.asarray(A, dtype=float))
    n = lam.size
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    def close(a, b):
        return abs(a - b) <= cluster_tol * max(1.0, abs(a), abs(b))

    for a in range(n):
        for b in range(a + 1, n):
            if close(lam[a], lam[b]) or close(lam[a], np.conj(lam[b])):
                union(a, b)
    clusters: dict[int, list[complex]] = {}
    for a in range(n):
        clusters.setdefault(find(a), []).append(lam[a])
    out = [np.array(sorted(c, key=lambda z: (z.real, z.imag))) for c in clusters.values()]
    out.sort(key=lambda c: (-float(np.mean(c.real)), float(np.max(np.abs(c.imag)))))
    return out


def matrix_polynomial(A: np.ndarray, roots: Sequence[complex]) -> np.ndarray:
    """prod_k (A - r_k I), real part (conjugate roots come in pairs)."""
    n = A.shape[0]
    M = np.eye(n, dtype=complex)
    for r in roots:
        M = M @ (A - r * np.eye(n))
    return M.real


def null_space(M: np.ndarray, tol: float) -> np.ndarray:
    if M.size == 0:
        return np.zeros((M.shape[1], 0))
    u, s, vt = np.linalg.svd(M)
    scale = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * scale)) if scale > 0 else 0
    return vt[rank:].T


@dataclass
class BlockDiagonalization:
    T_x: np.ndarray  # x_sub = T_x x
    T_x_inv: np.ndarray
    blocks: list[np.ndarray]
    clusters: list[np.ndarray]
    condition: float

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.blocks)

    @property
    def l(self) -> int:
        return len(self.blocks)

    def columns(self, j: int) -> slice:
        start = sum(self.sizes[: j - 1])
        return slice(start, start + self.sizes[j - 1])

    def residual(self, A) -> float:
        D = np.zeros_like(self.T_x)
        for j, b in enumerate(self.blocks, start=1):
            c = self.columns(j)
            D[c, c] = b
        return float(np.max(np.abs(self.T_x_inv @ D @ self.T_x - np.asarray(A))))


def block_diagonalize(A, clusters: Sequence[np.ndarray], kernel_tol: float = 1e-9,
                      offdiag_tol: float = 1e-8) -> BlockDiagonalization:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if len(clusters) == 1:
        return BlockDiagonalization(np.eye(n), np.eye(n), [A.copy()], list(clusters), 1.0)
    bases = []
    for c in clusters:
        V = null_space(matrix_polynomial(A, c), kernel_tol)
        if V.shape[1] != len(c):
            raise ValueError(f"kernel of the factor with roots {np.round(c, 6)} has dimension {V.shape[1]}, "
                             f"expected {len(c)}; the spectrum is nearly defective for cluster_tol")
        bases.append(V)
    T_inv = np.hstack(bases)
    if T_inv.shape[1] != n:
        raise ValueError("invariant subspaces do not span the state space")
    T = np.linalg.inv(T_inv)
    cond = float(np.linalg.cond(T_inv))
    if cond > CONDITION_WARNING:
        warnings.warn(f"coordinate change is ill-conditioned (cond {cond:.3g})", RuntimeWarning)
    D = T @ A @ T_inv
    blocks, start = [], 0
    off = D.copy()
    for V in bases:
        m = V.shape[1]
        blocks.append(D[start:start + m, start:start + m].copy())
        off[start:start + m, start:start + m] = 0
        start += m
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(off)) > offdiag_tol * scale:
        raise ValueError(f"off-diagonal residual {np.max(np.abs(off)):.3g} exceeds tolerance")
    return BlockDiagonalization(T, T_inv, blocks, list(clusters), cond)


@dataclass
class SensorDecomposition:
    sensor: int
    n_i: int
    O_blocks: dict[int, np.ndarray]  # j -> full-depth O_i^j (n x n^j), all j
    N_i: tuple[int, ...]
    ranks: dict[int, int] = field(default_factory=dict)
    T_i: Optional[np.ndarray] = None
    projections: dict[int, np.ndarray] = field(default_factory=dict)  # j -> T_i^j (n_i^j x n_i)
    local_maps: dict[int, np.ndarray] = field(default_factory=dict)  # j -> phi_i^j matrix (n_i^j x n^j)


def observability_blocks(c_row, bd: BlockDiagonalization, zero_tol: float = 1e-10) -> tuple[dict, tuple]:
    """O_i^j = col{C_i^j (A^j)^(k-1)}_{k=1..n} per block j, and N_i = {j : O_i^j != 0}."""
    c_row = np.asarray(c_row, dtype=float).reshape(-1)
    n = c_row.size
    CT = c_row @ bd.T_x_inv
    blocks, N = {}, []
    ref = float(np.max(np.abs(c_row)))
    for j, Aj in enumerate(bd.blocks, start=1):
        Oj = observability_matrix(Aj, CT[bd.columns(j)], depth=n)
        blocks[j] = Oj
        if ref > 0 and np.max(np.abs(Oj)) > zero_tol * ref:
            N.append(j)
    return blocks, tuple(N)


def _range_basis(M: np.ndarray, tol: float) -> np.ndarray:
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((M.shape[0], 0))
    return u[:, s > tol * s[0]]


def build_Ti(sensor: int, O_blocks: dict, N_i: Sequence[int], rank_tol: float = 1e-9) -> SensorDecomposition:
    """Rotate sensor i's canonical coordinates so each block depends on one sub-state."""
    if not N_i:
        raise ValueError(f"sensor {sensor} has no nonzero observability block")
    stacked = np.hstack([O_blocks[j] for j in N_i])
    n_i = _range_basis(stacked, rank_tol).shape[1]
    taus, ranks, R = [], {}, {}
    for j in N_i:
        R[j] = O_blocks[j][:n_i]
        tau = _range_basis(R[j], rank_tol)
        taus.append(tau)
        ranks[j] = tau.shape[1]
    basis = np.hstack(taus)
    if basis.shape[1] != n_i or np.linalg.matrix_rank(basis) != n_i:
        raise ValueError(f"sensor {sensor}: block image bases have {basis.shape[1]} columns for n_i={n_i}")
    T_i = np.linalg.inv(basis)
    dec = SensorDecomposition(sensor=sensor, n_i=n_i, O_blocks=O_blocks, N_i=tuple(N_i), ranks=ranks, T_i=T_i)
    start = 0
    for j in N_i:
        Tij = T_i[start:start + ranks[j]]
        dec.projections[j] = Tij
        dec.local_maps[j] = Tij @ R[j]
        start += ranks[j]
    return dec


@dataclass
class LinearPlan:
    system: LinearSystem
    q: int
    bd: BlockDiagonalization
    sensors: list[SensorDecomposition]
    groups: list[IndexSet]
    group_matrices: list[np.ndarray]  # Psi^j as a matrix acting on sub-state x^j
    complexity: dict

    @property
    def l(self) -> int:
        return self.bd.l

    def phi_matrix(self) -> np.ndarray:
        """Stacked canonical coordinates z_i = O_i[:n_i] x in original state coordinates."""
        return np.vstack([observability_matrix(self.system.A, self.system.C[s.sensor - 1])[: s.n_i]
                          for s in self.sensors])

    def psi_state_matrix(self, j: int) -> np.ndarray:
        """Psi^j as a matrix on the original state."""
        return self.group_matrices[j - 1] @ self.bd.T_x[self.bd.columns(j)]

    def unobserved_blocks(self) -> list[int]:
        return [j for j, g in enumerate(self.groups, start=1) if not g]

    def group_plan(self) -> GroupPlan:
        if self.unobserved_blocks():
            raise ValueError(f"sub-states {self.unobserved_blocks()} are seen by no sensor; the plant is not observable")
        psi, projections, bases = [], {}, []
        for j, g in enumerate(self.groups, start=1):
            M = self.psi_state_matrix(j)
            sizes = tuple(self.sensors[i - 1].ranks[j] for i in g)
            psi.append(VectorMap(f"linear.psi{j}", self.system.n, BlockLayout(sizes),
                                 lambda x, M=M: np.asarray(x) @ M.T, lambda x, M=M: M))
            for i in g:
                projections[(j, i)] = Projection.linear(self.sensors[i - 1].projections[j])
            bases.append(_range_basis(self.group_matrices[j - 1], 1e-9))
        return GroupPlan(groups=list(self.groups), psi=psi, projections=projections, bases=bases,
                         p=self.system.p)

    def inverse(self, values, subsets) -> np.ndarray:
        """Least-squares sub-states from each group's identified rows, mapped back to x."""
        if self.unobserved_blocks():
            raise ValueError(f"sub-states {self.unobserved_blocks()} are seen by no sensor; no left inverse")
        parts = []
        for j, (v, I) in enumerate(zip(values, subsets), start=1):
            g = self.groups[j - 1]
            sizes = [self.sensors[i - 1].ranks[j] for i in g]
            offs = np.cumsum([0] + sizes)
            rows = np.concatenate([np.arange(offs[g.index(i)], offs[g.index(i) + 1]) for i in I])
            parts.append(np.linalg.lstsq(self.group_matrices[j - 1][rows], np.asarray(v, dtype=float),
                                         rcond=None)[0])
        return self.bd.T_x_inv @ np.concatenate(parts)

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "blocks": [{"size": int(b.shape[0]),
                        "spectrum": [[float(z.real), float(z.imag)] for z in c]}
                       for b, c in zip(self.bd.blocks, self.bd.clusters)],
            "sensors": [{"sensor": s.sensor, "n_i": s.n_i, "N_i": list(s.N_i),
                         "n_i_j": {str(j): r for j, r in s.ranks.items()}} for s in self.sensors],
            "groups": [list(g) for g in self.groups],
            "complexity": self.complexity,
            "T_x_condition": self.bd.condition,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def plan_from_linear(sys: LinearSystem, q: int, cluster_tol: float = 1e-6, zero_tol: float = 1e-10,
                     verify: bool = False) -> LinearPlan:
    bd = block_diagonalize(sys.A, factor_relprime(sys.A, cluster_tol))
    sensors = []
    for i in range(1, sys.p + 1):
        blocks, N_i = observability_blocks(sys.C[i - 1], bd, zero_tol)
        if not N_i:
            raise ValueError(f"sensor {i} carries no information (zero output row)")
        sensors.append(build_Ti(i, blocks, N_i))
    groups = [tuple(s.sensor for s in sensors if j in s.N_i) for j in range(1, bd.l + 1)]
    group_matrices = []
    for j, g in enumerate(groups, start=1):
        if g:
            group_matrices.append(np.vstack([sensors[i - 1].local_maps[j] for i in g]))
        else:
            group_matrices.append(np.zeros((0, bd.sizes[j - 1])))
    nonempty = [g for g in groups if g]
    plan = LinearPlan(sys, q, bd, sensors, groups, group_matrices, complexity_report(sys.p, q, nonempty))
    if verify and not decomposition_equivalence(plan, 2 * q)["agree"]:
        raise ValueError("group redundancy and global redundancy disagree")
    return plan


def rank_redundant(blocks: Sequence[np.ndarray], k: int, tol: float = 1e-9) -> bool:
    """Linear k-redundancy: every p-k blocks have the rank of all blocks."""
    p = len(blocks)
    if k >= p:
        return all(np.max(np.abs(b)) == 0 for b in blocks) if blocks else True
    full = np.linalg.matrix_rank(np.vstack(blocks), tol=None)
    for I in combinations(p, p - k):
        sub = np.vstack([blocks[i - 1] for i in I])
        if np.linalg.matrix_rank(sub) != full:
            return False
    return True


def decomposition_equivalence(plan: LinearPlan, k: int) -> dict:
    """Global k-redundancy of Phi versus k-redundancy of every Psi^j (rank tests)."""
    Phi = plan.phi_matrix()
    sizes = [s.n_i for s in plan.sensors]
    offs = np.cumsum([0] + sizes)
    global_blocks = [Phi[offs[i]:offs[i + 1]] for i in range(len(sizes))]
    per_group = []
    for j, g in enumerate(plan.groups, start=1):
        M = plan.group_matrices[j - 1]
        sz = [plan.sensors[i - 1].ranks[j] for i in g]
        o = np.cumsum([0] + sz)
        per_group.append(rank_redundant([M[o[a]:o[a + 1]] for a in range(len(g))], k) if g else True)
    g_ok = rank_redundant(global_blocks, k)
    return {"global": g_ok, "groups": per_group, "agree": g_ok == all(per_group)}
