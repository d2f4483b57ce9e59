"""Scenario files: a versioned JSON schema and its translation into model objects.

Relative matrix file paths are resolved against the scenario file's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import BlockLayout, IndexSet, complexity_report
from .dynamics import Constant, NoiseSpec, PlantModel, Ramp, Signal, SignalSpec, Sine, Square, Table, Zero
from .identification import GroupPlan
from .lineardecomp import LinearPlan, LinearSystem, plan_from_linear
from .observers import ErrorBoundProfile
from .sampling import Box, CompactSet, InfBall, VectorMap
from .scenarios import SEC5_GROUPS, linear_plant, sec5_group_basis, sec5_group_map, sec5_inverse, sec5_plant

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Scenario file is malformed or inconsistent with the plant it names."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- signals -----------------------------------------------------------------

class ZeroSignal(_Strict):
    kind: Literal["zero"] = "zero"


class ConstantSignal(_Strict):
    kind: Literal["constant"]
    value: float


class SquareSignal(_Strict):
    kind: Literal["square"]
    amplitude: float
    period: float = Field(gt=0)
    start: float = 0.0


class RampSignal(_Strict):
    kind: Literal["ramp"]
    slope: float
    start: float = 0.0


class SineSignal(_Strict):
    kind: Literal["sine"]
    amplitude: float
    frequency: float = Field(ge=0, description="Hz")
    phase: float = 0.0


class TableSignal(_Strict):
    kind: Literal["table"]
    times: list[float]
    values: list[float]

    @model_validator(mode="after")
    def _check(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("table needs matching non-empty times and values")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("table times must be strictly increasing")
        return self


SignalModel = Annotated[Union[ZeroSignal, ConstantSignal, SquareSignal, RampSignal, SineSignal, TableSignal],
                        Field(discriminator="kind")]


def build_signal(m) -> Signal:
    if isinstance(m, ZeroSignal):
        return Zero()
    if isinstance(m, ConstantSignal):
        return Constant(m.value)
    if isinstance(m, SquareSignal):
        return Square(m.amplitude, m.period, m.start)
    if isinstance(m, RampSignal):
        return Ramp(m.slope, m.start)
    if isinstance(m, SineSignal):
        return Sine(m.amplitude, m.frequency, m.phase)
    return Table(tuple(m.times), tuple(m.values))


# --- plant -------------------------------------------------------------------

class BoxDomain(_Strict):
    kind: Literal["box"]
    lo: list[float]
    hi: list[float]


class BallDomain(_Strict):
    kind: Literal["ball"]
    center: list[float]
    radius: float = Field(gt=0)


DomainModel = Annotated[Union[BoxDomain, BallDomain], Field(discriminator="kind")]


class BuiltinPlant(_Strict):
    kind: Literal["builtin"]
    name: Literal["sec5"]


class LinearPlantModel(_Strict):
    kind: Literal["linear"]
    A: Optional[list[list[float]]] = None
    A_file: Optional[str] = None
    C: Optional[list[list[float]]] = None
    C_file: Optional[str] = None
    B: Optional[list[float]] = None
    domain: Optional[DomainModel] = None

    @model_validator(mode="after")
    def _one_source(self):
        for name in ("A", "C"):
            if (getattr(self, name) is None) == (getattr(self, f"{name}_file") is None):
                raise ValueError(f"give exactly one of {name} and {name}_file")
        return self


class DeltaModel(_Strict):
    """delta_i(t) = max(coefficient * exp(-theta_i t / 8), floor); floor defaults to the noise bound.

    ``coefficient: "calibrate"`` fits the smallest per-sensor coefficient that
    dominates the observer errors of an attack-free run with the same noise.
    """

    coefficient: Union[float, Literal["calibrate"]] = 0.0
    floor: Optional[float] = Field(default=None, gt=0)


class AttackModel(_Strict):
    sensors: list[int] = Field(min_length=1)
    signal: SignalModel


class NoiseModel(_Strict):
    bound: Union[float, list[float]] = 0.0
    seed: int = 0


class ReconstructionModel(_Strict):
    extension_check: bool = True
    extension_stride: int = Field(default=10, ge=1)


class Scenario(_Strict):
    schema_version: Literal[1]
    name: str = "scenario"
    plant: Annotated[Union[BuiltinPlant, LinearPlantModel], Field(discriminator="kind")]
    horizon: float = Field(gt=0)
    step: float = Field(gt=0)
    grid_delta: float = Field(gt=0)
    q: int = Field(ge=0)
    theta: Union[float, list[float]] = 20.0
    delta: DeltaModel = DeltaModel()
    groups: Union[Literal["auto", "builtin"], list[list[int]]] = "auto"
    inspection_mode: Literal["auto", "cloud", "subspace"] = "auto"
    input: SignalModel = ZeroSignal()
    attacks: list[AttackModel] = []
    noise: NoiseModel = NoiseModel()
    x0: Optional[list[float]] = None
    output_dir: Optional[str] = None
    reconstruction: ReconstructionModel = ReconstructionModel()
    estimate_constants: bool = True
    # group number -> certified redundancy constant; replaces the grid lower bound
    M_override: dict[int, float] = {}


def load_scenario(path) -> tuple[Scenario, Path]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    if isinstance(raw, dict) and raw.get("schema_version") not in (None, SCHEMA_VERSION):
        raise ScenarioError(f"unsupported schema_version {raw.get('schema_version')!r}; expected {SCHEMA_VERSION}")
    try:
        return Scenario.model_validate(raw), path.parent
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from exc


def read_matrix(path) -> np.ndarray:
    """Whitespace-separated reals, one matrix row per line; blank lines and '#' comments ignored."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError as exc:
            raise ScenarioError(f"{path}:{lineno}: {exc}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise ScenarioError(f"{path}: rows must be non-empty and of equal length")
    return np.array(rows)


# --- assembly ----------------------------------------------------------------

@dataclass
class Built:
    """Everything a run needs, derived from one scenario."""

    scenario: Scenario
    plant: PlantModel
    plan: GroupPlan
    linear_plan: Optional[LinearPlan]
    analytic_inverse: Optional[Callable]
    input: Signal
    attack: SignalSpec
    noise: NoiseSpec
    thetas: np.ndarray
    profiles: list[ErrorBoundProfile]
    x0: Optional[np.ndarray]

    def delta(self, t: float) -> np.ndarray:
        return np.array([prof(t) for prof in self.profiles], dtype=float)

    @property
    def counts(self) -> dict:
        return complexity_report(self.plant.p, self.scenario.q, self.plan.groups)


def build_domain(m) -> CompactSet:
    if isinstance(m, BoxDomain):
        return Box(tuple(m.lo), tuple(m.hi))
    return InfBall(tuple(m.center), m.radius)


def linear_matrices(m: LinearPlantModel, base: Path) -> tuple[np.ndarray, np.ndarray]:
    A = np.array(m.A, dtype=float) if m.A is not None else read_matrix(base / m.A_file)
    C = np.array(m.C, dtype=float) if m.C is not None else read_matrix(base / m.C_file)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ScenarioError(f"A must be square, got shape {A.shape}")
    if C.ndim != 2 or C.shape[1] != A.shape[0]:
        raise ScenarioError(f"C must have {A.shape[0]} columns, got shape {C.shape}")
    return A, C


def _restricted_plan(plant: PlantModel, groups: list[IndexSet], linear: bool) -> GroupPlan:
    """Groups with identity projections: Psi^j is Phi restricted to the group's blocks."""
    psi, bases = [], []
    for j, g in enumerate(groups, start=1):
        cols = plant.layout.columns(g)
        sizes = tuple(plant.layout.sizes[i - 1] for i in g)
        jac = None
        if linear:
            M = plant.phi.jac(plant.domain.center)[cols]
            jac = lambda x, M=M: M
            u, s, _ = np.linalg.svd(M, full_matrices=False)
            bases.append(u[:, s > 1e-9 * s[0]] if s.size and s[0] > 0 else None)
        psi.append(VectorMap(f"{plant.name}.psi{j}", plant.n, BlockLayout(sizes),
                             lambda x, c=cols: plant.phi(x)[..., c], jac))
    return GroupPlan(groups=groups, psi=psi, bases=bases or [], p=plant.p)


def build(sc: Scenario, base: Path = Path("."), seed: Optional[int] = None,
          attack_amplitude: Optional[float] = None) -> Built:
    """Translate a validated scenario into model objects.

    ``attack_amplitude`` rescales every attack signal to that amplitude
    (square, sine) or value (constant); ``seed`` replaces the noise seed.
    """
    linear_plan = None
    analytic = None
    if isinstance(sc.plant, BuiltinPlant):
        plant = sec5_plant()
        if sc.groups in ("builtin", "auto"):
            groups = [tuple(g) for g in SEC5_GROUPS]
            plan = GroupPlan(groups=groups, psi=[sec5_group_map(1), sec5_group_map(2)],
                             bases=[sec5_group_basis(1), sec5_group_basis(2)], p=plant.p)
            analytic = sec5_inverse
        else:
            plan = _restricted_plan(plant, [tuple(g) for g in sc.groups], linear=False)
    else:
        A, C = linear_matrices(sc.plant, base)
        domain = build_domain(sc.plant.domain) if sc.plant.domain else None
        if domain is not None and domain.dim != A.shape[0]:
            raise ScenarioError(f"domain has dimension {domain.dim}, plant has {A.shape[0]} states")
        try:
            plant = linear_plant(A, C, sc.plant.B, domain=domain, name=sc.name)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        if sc.groups == "auto":
            linear_plan = plan_from_linear(LinearSystem(A, C), sc.q)
            plan = linear_plan.group_plan()
            analytic = linear_plan.inverse
        elif sc.groups == "builtin":
            raise ScenarioError("groups 'builtin' needs a builtin plant")
        else:
            plan = _restricted_plan(plant, [tuple(g) for g in sc.groups], linear=True)
    p = plant.p
    for a in sc.attacks:
        bad = [i for i in a.sensors if not 1 <= i <= p]
        if bad:
            raise ScenarioError(f"attack names sensors {bad} outside 1..{p}")
    for g in plan.groups:
        if len(g) <= sc.q:
            raise ScenarioError(f"group {list(g)} has no subset of size |P_j| - q with q={sc.q}")
    for j, M in sc.M_override.items():
        if not 1 <= j <= plan.l or M < 1:
            raise ScenarioError(f"M_override needs group numbers in 1..{plan.l} and values >= 1, got {j}: {M}")
    channels = {}
    for a in sc.attacks:
        sig = build_signal(a.signal)
        if attack_amplitude is not None:
            sig = _rescaled(sig, attack_amplitude)
        for i in a.sensors:
            if i in channels:
                raise ScenarioError(f"sensor {i} appears in more than one attack")
            channels[i] = sig
    bound = sc.noise.bound
    if isinstance(bound, list) and len(bound) != p:
        raise ScenarioError(f"noise bound list has {len(bound)} entries for {p} sensors")
    if isinstance(sc.theta, list) and len(sc.theta) != p:
        raise ScenarioError(f"theta list has {len(sc.theta)} entries for {p} sensors")
    thetas = np.broadcast_to(np.asarray(sc.theta, dtype=float), (p,)).copy()
    if np.any(thetas < 1):
        raise ScenarioError("theta must be at least 1 for every sensor")
    floors = np.broadcast_to(np.asarray(bound, dtype=float), (p,))
    if sc.delta.floor is not None:
        floors = np.full(p, sc.delta.floor)
    if np.any(floors <= 0):
        raise ScenarioError("delta floor must be positive; set delta.floor when the noise bound is zero")
    coef = 0.0 if sc.delta.coefficient == "calibrate" else float(sc.delta.coefficient)
    if coef < 0:
        raise ScenarioError("delta coefficient must be non-negative")
    profiles = [ErrorBoundProfile(coef, th, fl) for th, fl in zip(thetas, floors)]
    x0 = None
    if sc.x0 is not None:
        if len(sc.x0) != plant.n:
            raise ScenarioError(f"x0 has {len(sc.x0)} entries for {plant.n} states")
        x0 = np.array(sc.x0, dtype=float)
    return Built(scenario=sc, plant=plant, plan=plan, linear_plan=linear_plan, analytic_inverse=analytic,
                 input=build_signal(sc.input), attack=SignalSpec(channels),
                 noise=NoiseSpec(bound=bound, seed=sc.noise.seed if seed is None else seed),
                 thetas=thetas, profiles=profiles, x0=x0)


def _rescaled(sig: Signal, amplitude: float) -> Signal:
    if isinstance(sig, Square):
        return Square(amplitude, sig.period, sig.start)
    if isinstance(sig, Sine):
        return Sine(amplitude, sig.frequency, sig.phase)
    if isinstance(sig, Constant):
        return Constant(amplitude)
    raise ScenarioError(f"cannot rescale a {type(sig).__name__} attack signal")
