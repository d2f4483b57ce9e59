"""Per-sensor high-gain observers.

Each sensor i gets an observer on its canonical coordinates z_i in R^{n_i}
with correction gain P^{-1} C^T, where P solves

    0 = -theta P - A^T P - P A + C^T C

for the shift matrix A and C = e_1^T.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import BlockLayout
from .dynamics import CanonicalForm, PlantModel, SimulationError, Trajectory


def shift_matrix(n: int) -> np.ndarray:
    return np.eye(n, k=1)


def lyapunov_residual(P: np.ndarray, theta: float) -> float:
    n = P.shape[0]
    A = shift_matrix(n)
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    R = -theta * P - A.T @ P - P @ A + C.T @ C
    return float(np.max(np.abs(R)))


@dataclass(frozen=True)
class GainSynthesis:
    P: np.ndarray
    gain: np.ndarray


def synthesize_gain(n: int, theta: float) -> GainSynthesis:
    """Solve the gain equation as the Lyapunov equation (A + theta/2 I)^T P + P (A + theta/2 I) = C^T C."""
    if n < 1:
        raise ValueError("observer dimension must be >= 1")
    if not theta > 0:
        raise ValueError("theta must be positive")
    shifted = shift_matrix(n) + 0.5 * theta * np.eye(n)
    CtC = np.zeros((n, n))
    CtC[0, 0] = 1.0
    P = scipy.linalg.solve_continuous_lyapunov(shifted.T, CtC)
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"gain equation solution is not positive definite (n={n}, theta={theta})") from exc
    gain = np.linalg.solve(P, np.eye(n)[:, 0])
    return GainSynthesis(P=P, gain=gain)


@dataclass(frozen=True)
class ObserverSpec:
    sensor: int
    form: CanonicalForm
    theta: float
    gain: np.ndarray

    @classmethod
    def design(cls, sensor: int, form: CanonicalForm, theta: float) -> "ObserverSpec":
        if theta < 1:
            raise ValueError("theta must be >= 1")
        return cls(sensor=sensor, form=form, theta=float(theta), gain=synthesize_gain(form.n, theta).gain)

    def rhs(self, z: np.ndarray, y: float, u: float) -> np.ndarray:
        n = self.form.n
        dz = np.empty(n)
        dz[:-1] = z[1:]
        dz[-1] = self.form.alpha(z)
        dz += np.array([b(z) for b in self.form.betas]) * u
        return dz - self.gain * (z[0] - y)


def observer_step(spec: ObserverSpec, z_hat, y: float, u: float, h: float) -> np.ndarray:
    """One RK4 step with y and u held over the step."""
    if not h > 0:
        raise ValueError("step must be positive")
    z = np.asarray(z_hat, dtype=float)
    k1 = spec.rhs(z, y, u)
    k2 = spec.rhs(z + 0.5 * h * k1, y, u)
    k3 = spec.rhs(z + 0.5 * h * k2, y, u)
    k4 = spec.rhs(z + h * k3, y, u)
    out = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError(f"observer {spec.sensor} diverged", float("nan"))
    return out


@dataclass(frozen=True)
class ErrorBoundProfile:
    """delta(t) = max(coefficient * exp(-theta t / 8), floor)."""

    coefficient: float
    theta: float
    floor: float

    def __call__(self, t):
        return np.maximum(self.coefficient * np.exp(-self.theta * np.asarray(t) / 8.0), self.floor)

    @classmethod
    def calibrate(cls, times, errors, theta: float, floor: float) -> "ErrorBoundProfile":
        """Smallest coefficient whose profile dominates the observed |errors|."""
        err = np.max(np.abs(np.asarray(errors).reshape(len(times), -1)), axis=1)
        over = err > floor
        c = float(np.max(err[over] * np.exp(theta * np.asarray(times)[over] / 8.0))) if np.any(over) else 0.0
        return cls(coefficient=c, theta=float(theta), floor=float(floor))


@dataclass(frozen=True)
class EstimateStream:
    times: np.ndarray
    layout: BlockLayout
    values: np.ndarray  # (K, layout.total)

    def block(self, i: int) -> np.ndarray:
        return self.values[:, self.layout.block_slice(i)]

    def to_csv(self, path) -> None:
        header = ["t"] + [f"zhat_{i}_{k + 1}" for i, s in enumerate(self.layout.sizes, start=1) for k in range(s)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


class ObserverBank:
    """All per-sensor observers stepped together.

    The stacked update is elementwise per block, so a channel's estimate
    never depends on other channels' measurements.
    """

    def __init__(self, plant: PlantModel, thetas: float | Sequence[float]):
        thetas = np.broadcast_to(np.asarray(thetas, dtype=float), (plant.p,))
        self.plant = plant
        self.specs = [ObserverSpec.design(i, form, th)
                      for i, (form, th) in enumerate(zip(plant.canonical, thetas), start=1)]
        layout = plant.layout
        self.layout = layout
        self.gain = np.concatenate([s.gain for s in self.specs])
        # position of each row's sensor output and of its block's first coordinate
        self.sensor_of_row = np.repeat(np.arange(plant.p), layout.sizes)
        self.first_of_row = np.repeat(np.array(layout.offsets), layout.sizes)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.specs])

    def _drift(self, z: np.ndarray, u: float) -> np.ndarray:
        if self.plant.bank_drift is not None:
            return self.plant.bank_drift(z, u)
        out = np.empty_like(z)
        for i, form in enumerate(self.plant.canonical, start=1):
            sl = self.layout.block_slice(i)
            zi = z[sl]
            d = np.empty(form.n)
            d[:-1] = zi[1:]
            d[-1] = form.alpha(zi)
            out[sl] = d + np.array([b(zi) for b in form.betas]) * u
        return out

    def rhs(self, z: np.ndarray, y: np.ndarray, u: float) -> np.ndarray:
        return self._drift(z, u) - self.gain * (z[self.first_of_row] - y[self.sensor_of_row])

    def step(self, z: np.ndarray, y: np.ndarray, u: float, h: float) -> np.ndarray:
        k1 = self.rhs(z, y, u)
        k2 = self.rhs(z + 0.5 * h * k1, y, u)
        k3 = self.rhs(z + 0.5 * h * k2, y, u)
        k4 = self.rhs(z + h * k3, y, u)
        return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def initial_state(self, nominal=None) -> np.ndarray:
        x = self.plant.domain.center if nominal is None else np.asarray(nominal, dtype=float)
        return np.asarray(self.plant.phi(x), dtype=float).copy()

    def run(self, traj: Trajectory, z0=None) -> EstimateStream:
        z = self.initial_state() if z0 is None else np.asarray(z0, dtype=float).copy()
        K = len(traj.times)
        out = np.empty((K, self.layout.total))
        out[0] = z
        h = traj.step
        for k in range(K - 1):
            z = self.step(z, traj.outputs[k], traj.inputs[k], h)
            if not np.all(np.isfinite(z)):
                bad = [s.sensor for s in self.specs if not np.all(np.isfinite(z[self.layout.block_slice(s.sensor)]))]
                raise SimulationError(f"observers {bad} diverged", traj.times[k + 1])
            out[k + 1] = z
        return EstimateStream(times=traj.times, layout=self.layout, values=out)


def run_bank(plant: PlantModel, traj: Trajectory, thetas, z0=None) -> EstimateStream:
    return ObserverBank(plant, thetas).run(traj, z0=z0)


def observer_errors(plant: PlantModel, traj: Trajectory, est: EstimateStream) -> np.ndarray:
    """Per-sensor inf-norm error |zhat_i - Phi_i(x)| at every sample, shape (K, p)."""
    truth = plant.phi(traj.states)
    diff = np.abs(est.values - truth)
    return np.stack([diff[:, est.layout.block_slice(i)].max(axis=1) for i in range(1, plant.p + 1)], axis=1)


def noise_floor_profiles(thetas, noise_bound, coefficient: float = 0.0) -> list[ErrorBoundProfile]:
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    bounds = np.broadcast_to(np.asarray(noise_bound, dtype=float), thetas.shape)
    return [ErrorBoundProfile(coefficient=coefficient, theta=th, floor=float(b)) for th, b in zip(thetas, bounds)]
