"""Built-in plants and maps.

``sec5`` is the 3-state, 20-sensor input-affine example: sensors 1..10 read
x1 - x3^2/2 + (i/10) x2, sensors 11..20 read x3/2 - sin(x2)/2. Every sensor
has a one-dimensional observable part, with canonical dynamics
z' = -z + (i/10) u and z' = u/2 respectively.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import BlockLayout
from .dynamics import CanonicalForm, PlantModel, Signal, Sine, SignalSpec, Square
from .sampling import Box, CompactSet, InfBall, VectorMap

SEC5_P = 20
SEC5_GROUPS = (tuple(range(1, 11)), tuple(range(11, 21)))
SEC5_WEIGHTS = np.arange(1, 11) / 10.0


def _sec5_f(x):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    c = np.cos(x2)
    return np.stack([-x1 + 0.5 * x3**2 - x2 * x3 * c, -x2, -x2 * c], axis=-1)


def _sec5_g(x):
    x2, x3 = x[..., 1], x[..., 2]
    c = np.cos(x2)
    return np.stack([x3 + x3 * c, np.ones_like(x2), 1 + c], axis=-1)


def _sec5_h(x):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    s1 = (x1 - 0.5 * x3**2)[..., None] + SEC5_WEIGHTS * x2[..., None]
    s2 = np.repeat((0.5 * x3 - 0.5 * np.sin(x2))[..., None], 10, axis=-1)
    return np.concatenate([s1, s2], axis=-1)


def _sec5_h_jac(x):
    x2, x3 = x[1], x[2]
    J = np.zeros((SEC5_P, 3))
    J[:10, 0] = 1.0
    J[:10, 1] = SEC5_WEIGHTS
    J[:10, 2] = -x3
    J[10:, 1] = -0.5 * np.cos(x2)
    J[10:, 2] = 0.5
    return J


_SEC5_DECAY = np.r_[np.ones(10), np.zeros(10)]
_SEC5_INPUT_GAIN = np.r_[SEC5_WEIGHTS, np.full(10, 0.5)]


def _sec5_bank_drift(z, u):
    return -_SEC5_DECAY * z + _SEC5_INPUT_GAIN * u


def _sec5_forms():
    forms = []
    for i in range(1, SEC5_P + 1):
        if i <= 10:
            forms.append(CanonicalForm(alpha=lambda z: -z[0], betas=(lambda z, w=i / 10: w,)))
        else:
            forms.append(CanonicalForm(alpha=lambda z: 0.0, betas=(lambda z: 0.5,)))
    return forms


def sec5_inverse(values, subsets) -> np.ndarray:
    """Closed-form state from identified group values.

    ``values[j]`` holds the (scalar-block) estimates of the sensors in
    ``subsets[j]`` (global sensor numbers).
    """
    I1, I2 = subsets
    w = np.array(I1, dtype=float) / 10.0
    O = np.stack([np.ones_like(w), w], axis=1)
    s1, x2 = np.linalg.lstsq(O, np.asarray(values[0], dtype=float), rcond=None)[0]
    s2 = float(np.mean(values[1]))
    x3 = 2 * s2 + np.sin(x2)
    x1 = s1 + 0.5 * x3**2
    return np.array([x1, x2, x3])


def sec5_plant() -> PlantModel:
    phi = VectorMap("sec5.phi", 3, BlockLayout.scalar(SEC5_P), _sec5_h, _sec5_h_jac)
    return PlantModel(n=3, p=SEC5_P, f=_sec5_f, g=_sec5_g, h=_sec5_h, phi=phi, canonical=_sec5_forms(),
                      domain=InfBall((0.0, 0.0, 0.0), 0.5), name="sec5", bank_drift=_sec5_bank_drift)


def sec5_group_map(j: int) -> VectorMap:
    """Psi^j for the 20-sensor example (projections are identities)."""
    cols = np.array(SEC5_GROUPS[j - 1]) - 1
    return VectorMap(f"sec5.psi{j}", 3, BlockLayout.scalar(len(cols)), lambda x, c=cols: _sec5_h(x)[..., c],
                     lambda x, c=cols: _sec5_h_jac(x)[c])


def sec5_group_basis(j: int) -> np.ndarray:
    """Columns spanning the linear subspace that contains Psi^j(X)."""
    if j == 1:
        return np.stack([np.ones(10), SEC5_WEIGHTS], axis=1)
    return np.ones((10, 1))


@dataclass
class ScenarioDefaults:
    horizon: float = 10.0
    step: float = 1e-3
    q: int = 4
    theta: float = 20.0
    noise_bound: float = 0.01
    delta: float = 0.01
    grid_delta: float = 0.05
    attacked: tuple[int, ...] = (1, 2, 3, 4)
    attack_amplitude: float = 0.5
    attack_period: float = 2.0
    attack_start: float = 4.0
    groups: tuple[tuple[int, ...], ...] = SEC5_GROUPS
    input: Signal = field(default_factory=lambda: Sine(0.25, 0.1))
    x0: tuple[float, ...] = (0.0, 0.0, 0.0)

    def attack_spec(self, amplitude: Optional[float] = None) -> SignalSpec:
        amp = self.attack_amplitude if amplitude is None else amplitude
        return SignalSpec({i: Square(amp, self.attack_period, self.attack_start) for i in self.attacked})


def builtin_scenario_sec5() -> tuple[PlantModel, ScenarioDefaults]:
    return sec5_plant(), ScenarioDefaults()


# --- polar fixtures ----------------------------------------------------------

POLAR_DOMAIN = Box((1.0, 0.0), (2.0, np.pi / 4))


def _polar(x):
    r, th = x[..., 0], x[..., 1]
    return np.stack([r * np.cos(th), r * np.sin(th), np.tan(th), th], axis=-1)


def _polar_projected(x):
    th = x[..., 1]
    return np.stack([np.cos(th), np.sin(th), np.tan(th), th], axis=-1)


def _polar_jac(x):
    r, th = x
    return np.array([[np.cos(th), -r * np.sin(th)], [np.sin(th), r * np.cos(th)],
                     [0.0, 1 / np.cos(th) ** 2], [0.0, 1.0]])


def _polar_projected_jac(x):
    th = x[1]
    return np.array([[0.0, -np.sin(th)], [0.0, np.cos(th)], [0.0, 1 / np.cos(th) ** 2], [0.0, 1.0]])


def polar_map() -> VectorMap:
    return VectorMap("polar", 2, BlockLayout((2, 1, 1)), _polar, _polar_jac)


def polar_projected_map() -> VectorMap:
    """First block normalized to unit length, which removes the radius."""
    return VectorMap("polar.projected", 2, BlockLayout((2, 1, 1)), _polar_projected, _polar_projected_jac)


BUILTIN_MAPS: dict[str, tuple[Callable[[], VectorMap], CompactSet]] = {
    "polar": (polar_map, POLAR_DOMAIN),
    "polar_projected": (polar_projected_map, POLAR_DOMAIN),
    "sec5_group1": (lambda: sec5_group_map(1), InfBall((0.0, 0.0, 0.0), 0.5)),
    "sec5_group2": (lambda: sec5_group_map(2), InfBall((0.0, 0.0, 0.0), 0.5)),
    "sec5_phi": (lambda: sec5_plant().phi, InfBall((0.0, 0.0, 0.0), 0.5)),
}


# --- linear plants -----------------------------------------------------------

def linear_plant(A, C, B=None, domain: Optional[CompactSet] = None, name: str = "linear") -> PlantModel:
    """Linear plant x' = A x + B u, y_i = C_i x, in per-sensor observable coordinates.

    Sensor i's block is z_i = col{C_i A^k x}_{k < n_i} with n_i the rank of its
    observability matrix; sensors with C_i = 0 are rejected.
    """
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, p = A.shape[0], C.shape[0]
    B = np.zeros(n) if B is None else np.asarray(B, dtype=float).reshape(n)
    domain = domain or InfBall(tuple(np.zeros(n)), 1.0)
    rows, forms, sizes, tops = [], [], [], []
    for i in range(p):
        O = observability_matrix(A, C[i])
        ni = int(np.linalg.matrix_rank(O))
        if ni == 0:
            raise ValueError(f"sensor {i + 1} has a zero output row")
        R = O[:ni]
        # C_i A^{n_i} = a . R expresses the top dynamics in canonical coordinates
        a = np.linalg.lstsq(R.T, C[i] @ np.linalg.matrix_power(A, ni), rcond=None)[0]
        b = R @ B
        forms.append(CanonicalForm(alpha=lambda z, a=a: float(a @ z), betas=tuple(lambda z, v=v: v for v in b)))
        rows.append(R)
        sizes.append(ni)
        tops.append(a)
    Phi = np.vstack(rows)
    layout = BlockLayout(tuple(sizes))
    phi = VectorMap(f"{name}.phi", n, layout, lambda x, M=Phi: x @ M.T, lambda x, M=Phi: M)
    bvec = Phi @ B
    slices = [layout.block_slice(i) for i in range(1, p + 1)]

    def bank_drift(z, u):
        out = np.empty_like(z)
        for sl, a in zip(slices, tops):
            zi = z[sl]
            out[sl.start:sl.stop - 1] = zi[1:]
            out[sl.stop - 1] = a @ zi
        return out + bvec * u

    return PlantModel(n=n, p=p, f=lambda x: x @ A.T, g=lambda x: np.broadcast_to(B, np.shape(x)),
                      h=lambda x: x @ C.T, phi=phi, canonical=forms, domain=domain, name=name,
                      bank_drift=bank_drift)


def observability_matrix(A, c_row, depth: Optional[int] = None) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    depth = A.shape[0] if depth is None else depth
    rows = [np.asarray(c_row, dtype=float).reshape(-1)]
    for _ in range(depth - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)
