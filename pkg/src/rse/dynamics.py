"""Plant simulation with additive sensor attacks and bounded noise.

Inputs, attacks and noise are held constant over each integration step, so
every stored sample satisfies y = h(x) + a + v exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import BlockLayout
from .sampling import CompactSet, VectorMap


class SimulationError(RuntimeError):
    """Numerical abort: non-finite state or guard-box violation."""

    def __init__(self, message: str, t: float):
        super().__init__(f"t={t:.6g}: {message}")
        self.t = t


@dataclass(frozen=True)
class CanonicalForm:
    """Per-sensor observable form: z' = shift(z) + [0..0, alpha(z)] + beta(z) u.

    ``betas[k]`` may only read z[:k+1].
    """

    alpha: Callable[[np.ndarray], float]
    betas: tuple[Callable[[np.ndarray], float], ...]

    @property
    def n(self) -> int:
        return len(self.betas)


@dataclass
class PlantModel:
    n: int
    p: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    phi: VectorMap
    canonical: list[CanonicalForm]
    domain: CompactSet
    name: str = "plant"
    # optional vectorized open-loop canonical dynamics for the whole bank:
    # (zhat stacked, u) -> d zhat/dt without output injection
    bank_drift: Optional[Callable[[np.ndarray, float], np.ndarray]] = None

    def __post_init__(self):
        if self.phi.layout.p != self.p:
            raise ValueError("observability map must have one block per sensor")
        if len(self.canonical) != self.p:
            raise ValueError("need one canonical form per sensor")
        for i, (form, size) in enumerate(zip(self.canonical, self.phi.layout.sizes), start=1):
            if form.n != size:
                raise ValueError(f"sensor {i}: canonical dimension {form.n} != block size {size}")

    @property
    def layout(self) -> BlockLayout:
        return self.phi.layout

    def vector_field(self, u: float) -> Callable[[np.ndarray], np.ndarray]:
        return lambda x: self.f(x) + self.g(x) * u

    def check_output_consistency(self, x) -> float:
        """max |Phi_i(x)_1 - h_i(x)|; zero for a well-formed plant."""
        z = self.phi(x)
        first = np.array(self.layout.offsets)
        return float(np.max(np.abs(z[first] - self.h(x))))


# --- signals ---------------------------------------------------------------

@dataclass(frozen=True)
class Zero:
    def __call__(self, t: float) -> float:
        return 0.0


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t: float) -> float:
        return float(self.value)


@dataclass(frozen=True)
class Square:
    """+amplitude for the first half of each period after ``start``, -amplitude for the second."""

    amplitude: float
    period: float
    start: float = 0.0

    def __call__(self, t: float) -> float:
        if t < self.start:
            return 0.0
        phase = math.fmod(t - self.start, self.period)
        return float(self.amplitude) if phase < self.period / 2 else -float(self.amplitude)


@dataclass(frozen=True)
class Ramp:
    slope: float
    start: float = 0.0

    def __call__(self, t: float) -> float:
        return 0.0 if t < self.start else float(self.slope) * (t - self.start)


@dataclass(frozen=True)
class Sine:
    amplitude: float
    frequency: float  # Hz
    phase: float = 0.0

    def __call__(self, t: float) -> float:
        return float(self.amplitude) * math.sin(2 * math.pi * self.frequency * t + self.phase)


@dataclass(frozen=True)
class Table:
    """Piecewise-constant: value v_k on [t_k, t_{k+1}), 0 before t_0."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("table needs matching non-empty times and values")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("table times must be strictly increasing")

    def __call__(self, t: float) -> float:
        k = np.searchsorted(self.times, t, side="right") - 1
        return 0.0 if k < 0 else float(self.values[k])


Signal = Callable[[float], float]


@dataclass(frozen=True)
class SignalSpec:
    """Per-channel signals; unlisted channels (1-based) are identically zero."""

    channels: Mapping[int, Signal] = field(default_factory=dict)

    def sample(self, times: np.ndarray, width: int) -> np.ndarray:
        out = np.zeros((len(times), width))
        for ch, sig in self.channels.items():
            if not 1 <= ch <= width:
                raise IndexError(f"signal channel {ch} outside 1..{width}")
            out[:, ch - 1] = [sig(t) for t in times]
        return out

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(sorted(ch for ch, s in self.channels.items() if not isinstance(s, Zero)))


@dataclass(frozen=True)
class NoiseSpec:
    bound: float | Sequence[float] = 0.0
    seed: int = 0

    def sample(self, steps: int, p: int) -> np.ndarray:
        bound = np.broadcast_to(np.asarray(self.bound, dtype=float), (p,))
        if np.any(bound < 0):
            raise ValueError("noise bound must be non-negative")
        rng = np.random.default_rng(self.seed)
        return rng.uniform(-1.0, 1.0, size=(steps, p)) * bound


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    clean_outputs: np.ndarray
    attack: np.ndarray
    noise: np.ndarray
    step: float

    def to_csv(self, path) -> None:
        n, p = self.states.shape[1], self.outputs.shape[1]
        header = ["t"] + [f"x_{k + 1}" for k in range(n)] + [f"y_{i + 1}" for i in range(p)] \
            + [f"a_{i + 1}" for i in range(p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in np.hstack([self.times[:, None], self.states, self.outputs, self.attack]):
                w.writerow([repr(float(v)) for v in row])


def rk4_step(field: Callable[[np.ndarray], np.ndarray], x, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of an autonomous field."""
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    k1 = field(x)
    k2 = field(x + 0.5 * h * k1)
    k3 = field(x + 0.5 * h * k2)
    k4 = field(x + h * k3)
    out = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite state after integration step", float("nan"))
    return out


def sample_times(T: float, h: float) -> np.ndarray:
    if not (T > 0 and h > 0):
        raise ValueError("horizon and step must be positive")
    K = int(round(T / h))
    return np.arange(K + 1) * h


def simulate(plant: PlantModel, u: Signal, attack: SignalSpec, noise: NoiseSpec, T: float, h: float,
             x0=None, guard_factor: float = 10.0) -> Trajectory:
    """Integrate the plant and produce attacked, noisy output samples."""
    times = sample_times(T, h)
    K = len(times)
    x = plant.domain.center if x0 is None else np.asarray(x0, dtype=float)
    if x.shape != (plant.n,):
        raise ValueError(f"initial state must have shape ({plant.n},)")
    guard = plant.domain.scaled(guard_factor)
    inputs = np.array([u(t) for t in times])
    states = np.empty((K, plant.n))
    states[0] = x
    for k in range(K - 1):
        try:
            x = rk4_step(plant.vector_field(inputs[k]), x, h)
        except SimulationError as exc:
            raise SimulationError("non-finite state", times[k + 1]) from exc
        if not guard.contains(x):
            raise SimulationError(f"state {x} left the guard box", times[k + 1])
        states[k + 1] = x
    clean = np.asarray(plant.h(states))
    a = attack.sample(times, plant.p)
    v = noise.sample(K, plant.p)
    return Trajectory(times=times, states=states, inputs=inputs, outputs=clean + a + v,
                      clean_outputs=clean, attack=a, noise=v, step=h)
