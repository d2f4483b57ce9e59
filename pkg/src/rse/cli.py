"""Command line entry point: ``rse run|count|redundancy|decompose``.

Exit codes: 0 success, 1 unexpected error, 2 scenario/schema error,
3 numerical abort, 4 identification exhausted at some sample.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import (BallDomain, BoxDomain, ScenarioError, build_domain, build, linear_matrices, load_scenario,
                     read_matrix)
from .core import BlockLayout, complexity_report
from .dynamics import SimulationError
from .lineardecomp import LinearSystem, decomposition_equivalence, plan_from_linear
from .reconstruction import InconsistentAnchorsError
from .redundancy import check_k_redundant, check_rank_criterion
from .sampling import VectorMap, build_grid
from .scenarios import BUILTIN_MAPS

EXIT_OK, EXIT_ERROR, EXIT_SCHEMA, EXIT_NUMERIC, EXIT_EXHAUSTED = 0, 1, 2, 3, 4

log = logging.getLogger("rse")


class MapScenario(BaseModel):
    """Target of ``rse redundancy`` when it is a bare map rather than a plant."""

    model_config = ConfigDict(extra="forbid")
    schema_version: Literal[1]
    map: Optional[str] = None
    matrix: Optional[list[list[float]]] = None
    blocks: Optional[list[int]] = None
    domain: Optional[Union[BoxDomain, BallDomain]] = Field(default=None, discriminator="kind")
    grid_delta: float = Field(gt=0)
    k: int = Field(default=1, ge=0)
    method: Literal["grid", "rank"] = "grid"
    eps_match: Optional[float] = None
    eps_sep: Optional[float] = None


def _map_target(m: MapScenario):
    if (m.map is None) == (m.matrix is None):
        raise ScenarioError("give exactly one of map and matrix")
    if m.map is not None:
        if m.map not in BUILTIN_MAPS:
            raise ScenarioError(f"unknown map {m.map!r}; known: {sorted(BUILTIN_MAPS)}")
        factory, domain = BUILTIN_MAPS[m.map]
        return factory(), build_domain(m.domain) if m.domain else domain
    M = np.array(m.matrix, dtype=float)
    sizes = tuple(m.blocks) if m.blocks else (1,) * M.shape[0]
    if sum(sizes) != M.shape[0]:
        raise ScenarioError(f"blocks {sizes} do not add up to {M.shape[0]} rows")
    if m.domain is None:
        raise ScenarioError("a matrix map needs a domain")
    vmap = VectorMap("matrix", M.shape[1], BlockLayout(sizes), lambda x: np.asarray(x) @ M.T, lambda x: M)
    return vmap, build_domain(m.domain)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_run(args) -> int:
    from .pipeline import run, write_outputs

    sc, base = load_scenario(args.scenario)
    built = build(sc, base, seed=args.seed, attack_amplitude=args.attack_amplitude)
    out = Path(args.out or sc.output_dir or Path("out") / sc.name)
    t0 = time.perf_counter()
    res = run(built)
    summary = write_outputs(res, out, svg=args.svg)
    log.info("run finished in %.2f s, outputs in %s", time.perf_counter() - t0, out)
    brief = {k: summary[k] for k in ("detection_time", "detection_times", "final_subsets", "max_err_pre",
                                     "max_err_post", "max_epoch_scans", "counts", "exhausted")}
    brief["switches"] = len(summary["switches"])
    brief["out"] = str(out)
    _print(brief)
    return EXIT_EXHAUSTED if summary["exhausted"] else EXIT_OK


def cmd_count(args) -> int:
    sc, base = load_scenario(args.scenario)
    q = sc.q if args.q is None else args.q
    if q != sc.q:
        sc = sc.model_copy(update={"q": q})
    if sc.plant.kind == "linear" and sc.groups == "auto":
        A, C = linear_matrices(sc.plant, base)
        _print(plan_from_linear(LinearSystem(A, C), q).complexity)
        return EXIT_OK
    built = build(sc, base)
    _print(complexity_report(built.plant.p, q, built.plan.groups))
    return EXIT_OK


def cmd_redundancy(args) -> int:
    path = Path(args.scenario)
    if not path.exists() and args.scenario in BUILTIN_MAPS:
        m = MapScenario(schema_version=1, map=args.scenario, grid_delta=args.grid_delta or 0.01, k=args.k or 1)
    else:
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read {path}: {exc}") from exc
        if "plant" in raw:
            sc, base = load_scenario(path)
            built = build(sc, base)
            m = None
            vmap, domain = built.plant.phi, built.plant.domain
            delta, k, method, em, es = sc.grid_delta, 2 * sc.q, "grid", None, None
        else:
            try:
                m = MapScenario.model_validate(raw)
            except ValidationError as exc:
                raise ScenarioError(str(exc)) from exc
    if m is not None:
        vmap, domain = _map_target(m)
        delta, k, method, em, es = m.grid_delta, m.k, m.method, m.eps_match, m.eps_sep
    if args.k is not None:
        k = args.k
    if args.grid_delta is not None:
        delta = args.grid_delta
    grid = build_grid(domain, delta)
    if method == "rank":
        verdict = check_rank_criterion(vmap, grid, k)
    else:
        verdict = check_k_redundant(vmap, grid, k, eps_match=em, eps_sep=es, with_M=args.with_m)
    out = json.loads(verdict.to_json())
    out["map"] = vmap.id
    out["grid_points"] = len(grid)
    if not args.verbose:
        out.pop("tolerances", None)
    _print(out)
    return EXIT_OK


def cmd_decompose(args) -> int:
    if len(args.inputs) == 1:
        sc, base = load_scenario(args.inputs[0])
        if sc.plant.kind != "linear":
            raise ScenarioError("decompose needs a linear plant")
        A, C = linear_matrices(sc.plant, base)
        q = sc.q if args.q is None else args.q
    elif len(args.inputs) == 2:
        A, C = read_matrix(args.inputs[0]), read_matrix(args.inputs[1])
        q = 1 if args.q is None else args.q
    else:
        raise ScenarioError("decompose takes a scenario file or two matrix files (A, C)")
    try:
        sys_ = LinearSystem(A, C)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    plan = plan_from_linear(sys_, q, cluster_tol=args.cluster_tol)
    out = plan.to_dict()
    if args.verify:
        out["equivalence"] = decomposition_equivalence(plan, 2 * q)
    _print(out)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rse", description="Resilient state estimation under sensor attacks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate, identify and reconstruct; write CSV/JSON outputs")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None, help="override the noise seed")
    p.add_argument("--out", default=None, help="output directory (default out/<name>)")
    p.add_argument("--svg", action="store_true", help="also write SVG plots")
    p.add_argument("--attack-amplitude", type=float, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("count", help="subsets examined by global versus group-wise identification")
    p.add_argument("scenario")
    p.add_argument("--q", type=int, default=None)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("redundancy", help="grid or rank check of k-redundancy")
    p.add_argument("scenario", help="map scenario, plant scenario or builtin map name")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--grid-delta", type=float, default=None)
    p.add_argument("--with-m", action="store_true", help="also estimate the redundancy constant")
    p.set_defaults(func=cmd_redundancy)

    p = sub.add_parser("decompose", help="sensor groups of a linear plant")
    p.add_argument("inputs", nargs="+", help="scenario file, or A and C matrix files")
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--cluster-tol", type=float, default=1e-6)
    p.add_argument("--verify", action="store_true", help="rank check that group and global redundancy agree")
    p.set_defaults(func=cmd_decompose)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"rse: scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (SimulationError, InconsistentAnchorsError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"rse: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"rse: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
