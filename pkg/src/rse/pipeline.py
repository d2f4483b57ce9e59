"""End-to-end run: simulate, observe, identify, reconstruct, summarize."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import Built
from .dynamics import SignalSpec, Trajectory, simulate
from .identification import InspectionConfig, Inspector, MonitorResult, monitor_run, resolve_threads
from .observers import ErrorBoundProfile, EstimateStream, observer_errors, run_bank
from .reconstruction import ReconstructionPlan, StateEstimate, reconstruct
from .redundancy import NotRedundantError, estimate_M
from .sampling import SampleGrid, build_grid

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    built: Built
    trajectory: Trajectory
    estimates: EstimateStream
    monitor: MonitorResult
    state: StateEstimate
    grid: SampleGrid
    rplan: ReconstructionPlan
    constants: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return self.state.errors(self.trajectory.states)

    def summary(self) -> dict:
        mon, times, err = self.monitor, self.monitor.times, self.errors
        l = len(mon.groups)
        detections = {str(j): mon.first_failure_time(j) for j in range(1, l + 1)}
        found = [t for t in detections.values() if t is not None]
        first = min(found) if found else None
        last = mon.last_switch_time()
        pre = times < first if first is not None else np.ones_like(times, dtype=bool)
        post = times > last if last is not None else np.zeros_like(times, dtype=bool)
        in_domain = self.built.plant.domain.contains(self.trajectory.states)
        ext = self.state.xhat_extension
        ext_dev = None
        if ext is not None:
            ok = ~np.isnan(ext[:, 0]) & in_domain
            if ok.any():
                ext_dev = float(np.max(np.abs(ext[ok] - self.state.xhat[ok])))
        return {
            "scenario": self.built.scenario.name,
            "seed": self.built.noise.seed,
            "samples": int(len(times)),
            "detection_time": first,
            "detection_times": detections,
            "switches": [{"t": e["t"], "group": e["group"], "from": e["previous"], "to": e["subset"]}
                         for e in mon.switches()],
            "initial_subsets": [list(I) if I else None for I in mon.initial],
            "final_subsets": [list(mon.chosen[j][-1]) if mon.chosen[j][-1] else None for j in range(l)],
            "exhausted": mon.exhausted,
            "exhausted_samples": int(mon.flagged.any(axis=1).sum()),
            "max_err_pre": float(err[pre].max()) if pre.any() else None,
            "max_err_post": float(err[post].max()) if post.any() else None,
            "max_err": float(err.max()),
            "state_in_domain_fraction": float(in_domain.mean()),
            "extension_max_deviation_in_domain": ext_dev,
            "max_epoch_scans": max(mon.epoch_scans) if mon.epoch_scans else 0,
            "counts": self.built.counts,
            "constants": self.constants,
        }


def _cloud_lipschitz(cfg: InspectionConfig) -> dict:
    return {f"{j}:{','.join(map(str, I))}": float(L) for (j, I), L in cfg.lipschitz.items()}


def calibrate_profiles(built: Built) -> list[ErrorBoundProfile]:
    """Per-sensor transient coefficients from an attack-free run with the scenario's noise."""
    sc = built.scenario
    clean = simulate(built.plant, built.input, SignalSpec(), built.noise, sc.horizon, sc.step, x0=built.x0)
    err = observer_errors(built.plant, clean, run_bank(built.plant, clean, built.thetas))
    return [ErrorBoundProfile.calibrate(clean.times, err[:, i], pr.theta, pr.floor)
            for i, pr in enumerate(built.profiles)]


def run(built: Built, with_extension: Optional[bool] = None) -> RunResult:
    sc = built.scenario
    plant = built.plant
    if sc.delta.coefficient == "calibrate":
        built.profiles = calibrate_profiles(built)
    traj = simulate(plant, built.input, built.attack, built.noise, sc.horizon, sc.step, x0=built.x0)
    est = run_bank(plant, traj, built.thetas)
    grid = build_grid(plant.domain, sc.grid_delta)
    cfg = InspectionConfig(q=sc.q, delta=built.delta, grid=grid, mode=sc.inspection_mode,
                           threads=resolve_threads())
    mon = monitor_run(est, built.plan, cfg)
    rplan = ReconstructionPlan(built.plan, grid, analytic_inverse=built.analytic_inverse)
    use_ext = sc.reconstruction.extension_check if with_extension is None else with_extension
    state = reconstruct(rplan, mon, with_extension=use_ext, extension_stride=sc.reconstruction.extension_stride)

    constants = {
        "grid_delta": grid.delta,
        "grid_points": len(grid),
        "q": sc.q,
        "theta": built.thetas.tolist(),
        "delta": [{"coefficient": pr.coefficient, "floor": pr.floor, "rate": pr.theta / 8.0}
                  for pr in built.profiles],
        "inspection_modes": {str(j): m for j, m in _modes(built, cfg).items()},
        "cloud_lipschitz": _cloud_lipschitz(cfg),
        "extension_lipschitz": [float(e.L) for e in rplan.extensions()],
    }
    if sc.estimate_constants or sc.M_override:
        M, bounds = {}, {}
        deltas = built.delta(sc.horizon)
        for j, psi in enumerate(built.plan.psi, start=1):
            try:
                if j in sc.M_override:
                    M[str(j)] = float(sc.M_override[j])
                elif sc.estimate_constants:
                    M[str(j)] = estimate_M(psi, grid, sc.q)
                else:
                    continue
            except NotRedundantError as exc:
                log.warning("group %d: %s", j, exc)
                M[str(j)] = None
                continue
            dj = built.plan.delta_for_group(j, deltas)
            bounds[str(j)] = (2 * M[str(j)] ** 2 + M[str(j)]) * dj
        constants["M_hat"] = M
        constants["M_source"] = {str(j): "override" if j in sc.M_override else "grid lower bound"
                                  for j in range(1, built.plan.l + 1) if str(j) in M}
        constants["group_error_bound_at_horizon"] = bounds
    return RunResult(built, traj, est, mon, state, grid, rplan, constants)


def _modes(built: Built, cfg: InspectionConfig) -> dict:
    return dict(enumerate(Inspector(built.plan, cfg, built.plant.layout).modes, start=1))


def write_outputs(res: RunResult, out: Path, svg: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    res.trajectory.to_csv(out / "trajectory.csv")
    res.estimates.to_csv(out / "estimates.csv")
    res.monitor.write_jsonl(out / "detections.jsonl")
    res.state.to_csv(out / "xhat.csv", states=res.trajectory.states)
    summary = res.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if svg:
        from .svg import write_run_plots

        write_run_plots(res, out)
    return summary


def observer_error_table(res: RunResult) -> np.ndarray:
    return observer_errors(res.built.plant, res.trajectory, res.estimates)
