import json
import shutil

import numpy as np
import pytest

from rse.cli import EXIT_EXHAUSTED, EXIT_NUMERIC, EXIT_OK, EXIT_SCHEMA, main
from rse.config import ScenarioError, build, load_scenario, read_matrix
from rse.dynamics import Sine, Square


def write(tmp_path, obj, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


def small_linear(**over):
    sc = {"schema_version": 1, "name": "tiny", "plant": {"kind": "linear", "A": [[-1.0, 0.0], [0.0, -2.0]],
                                                        "C": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]},
          "horizon": 0.3, "step": 0.01, "grid_delta": 0.2, "q": 0, "theta": 5.0, "delta": {"floor": 0.01},
          "reconstruction": {"extension_check": False}, "estimate_constants": False}
    sc.update(over)
    return sc


def run_cli(argv, capsys):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_sec5_scenario_builds(scenarios_dir):
    sc, base = load_scenario(scenarios_dir / "sec5.json")
    built = build(sc, base)
    assert built.counts == {"global": 4845, "local": 420}
    assert isinstance(built.input, Sine)
    assert set(built.attack.channels) == {1, 2, 3, 4}
    assert np.allclose(built.delta(0.0), 0.01)
    amp = build(sc, base, attack_amplitude=50.0).attack.channels[1]
    assert isinstance(amp, Square) and amp.amplitude == 50.0
    assert build(sc, base, seed=7).noise.seed == 7


def test_read_matrix(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("# header\n1 2\n\n3 4  # trailing\n")
    assert np.array_equal(read_matrix(p), [[1, 2], [3, 4]])
    p.write_text("1 2\n3\n")
    with pytest.raises(ScenarioError):
        read_matrix(p)
    p.write_text("1 x\n")
    with pytest.raises(ScenarioError):
        read_matrix(p)


@pytest.mark.parametrize("change", [
    {"schema_version": 2},
    {"surprise": 1},
    {"q": -1},
    {"input": {"kind": "chirp"}},
    {"attacks": [{"sensors": [4], "signal": {"kind": "constant", "value": 1.0}}]},
    {"attacks": [{"sensors": [1], "signal": {"kind": "constant", "value": 1.0}},
                 {"sensors": [1], "signal": {"kind": "constant", "value": 2.0}}]},
    {"q": 2},
    {"theta": 0.5},
    {"theta": [5.0, 5.0]},
    {"noise": {"bound": [0.1, 0.1]}},
    {"delta": {}},
    {"x0": [0.0]},
    {"groups": "builtin"},
    {"plant": {"kind": "linear", "A": [[-1.0]], "A_file": "a.txt", "C": [[1.0]]}},
    {"plant": {"kind": "linear", "A": [[-1.0, 0.0]], "C": [[1.0]]}},
    {"input": {"kind": "table", "times": [0.0, 0.0], "values": [1.0, 2.0]}},
    {"M_override": {"3": 2.0}},
    {"M_override": {"1": 0.5}},
])
def test_invalid_scenarios_exit_with_schema_code(tmp_path, capsys, change):
    path = write(tmp_path, small_linear(**change))
    code, out = run_cli(["run", path, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_SCHEMA
    assert "scenario error" in out.err


def test_missing_file_is_schema_error(tmp_path, capsys):
    code, out = run_cli(["count", tmp_path / "absent.json"], capsys)
    assert code == EXIT_SCHEMA


def test_count_command(scenarios_dir, capsys):
    code, out = run_cli(["count", scenarios_dir / "sec5.json"], capsys)
    assert code == EXIT_OK and json.loads(out.out) == {"global": 4845, "local": 420}
    code, out = run_cli(["count", scenarios_dir / "sec5.json", "--q", "0"], capsys)
    assert json.loads(out.out) == {"global": 1, "local": 2}
    code, out = run_cli(["count", scenarios_dir / "linear_analog.json"], capsys)
    assert json.loads(out.out) == {"global": 4845, "local": 420}


def test_decompose_command(scenarios_dir, capsys):
    m = scenarios_dir / "matrices"
    code, out = run_cli(["decompose", m / "diag_A.txt", m / "diag_C.txt", "--verify"], capsys)
    d = json.loads(out.out)
    assert code == EXIT_OK and d["groups"] == [[1, 3], [2, 3]] and d["equivalence"]["agree"]
    code, out = run_cli(["decompose", scenarios_dir / "linear_diag.json"], capsys)
    assert json.loads(out.out)["complexity"] == {"global": 1, "local": 2}
    code, out = run_cli(["decompose", scenarios_dir / "sec5.json"], capsys)
    assert code == EXIT_SCHEMA


def test_redundancy_command(scenarios_dir, capsys):
    code, out = run_cli(["redundancy", scenarios_dir / "polar.json"], capsys)
    assert code == EXIT_OK and json.loads(out.out)["holds"] is False
    code, out = run_cli(["redundancy", scenarios_dir / "polar_projected.json"], capsys)
    assert json.loads(out.out)["holds"] is True
    code, out = run_cli(["redundancy", "polar", "--k", "0", "--grid-delta", "0.1"], capsys)
    assert json.loads(out.out)["holds"] is True


def test_redundancy_matrix_map(tmp_path, capsys):
    spec = {"schema_version": 1, "matrix": [[1, 0], [0, 1], [1, 1]], "grid_delta": 0.25, "k": 1,
            "method": "rank", "domain": {"kind": "box", "lo": [-1, -1], "hi": [1, 1]}}
    code, out = run_cli(["redundancy", write(tmp_path, spec)], capsys)
    assert code == EXIT_OK and json.loads(out.out)["holds"] is True
    spec["k"] = 2
    code, out = run_cli(["redundancy", write(tmp_path, spec)], capsys)
    assert json.loads(out.out)["holds"] is False
    del spec["domain"]
    code, out = run_cli(["redundancy", write(tmp_path, spec)], capsys)
    assert code == EXIT_SCHEMA


def test_run_writes_outputs(tmp_path, capsys):
    path = write(tmp_path, small_linear())
    out = tmp_path / "o"
    code, res = run_cli(["run", path, "--out", out, "--svg"], capsys)
    assert code == EXIT_OK
    for name in ("trajectory.csv", "estimates.csv", "detections.jsonl", "xhat.csv", "summary.json",
                 "error.svg", "residual_group1.svg"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["samples"] == 31 and summary["counts"] == {"global": 1, "local": 2}
    assert json.loads(res.out)["out"] == str(out)


def test_run_exhausted_exit_code(tmp_path, capsys):
    sc = small_linear(attacks=[{"sensors": [3], "signal": {"kind": "constant", "value": 1.0}}])
    code, res = run_cli(["run", write(tmp_path, sc), "--out", tmp_path / "o"], capsys)
    assert code == EXIT_EXHAUSTED and json.loads(res.out)["exhausted"] is True


def test_numerical_abort_exit_code(tmp_path, capsys):
    sc = small_linear(plant={"kind": "linear", "A": [[8.0]], "C": [[1.0], [1.0]]}, horizon=3.0,
                      x0=[0.5], delta={"floor": 0.01})
    code, res = run_cli(["run", write(tmp_path, sc), "--out", tmp_path / "o"], capsys)
    assert code == EXIT_NUMERIC and "numerical abort" in res.err


def test_matrix_files_resolve_relative_to_scenario(tmp_path, scenarios_dir, capsys):
    shutil.copytree(scenarios_dir / "matrices", tmp_path / "matrices")
    shutil.copy(scenarios_dir / "linear_diag.json", tmp_path / "d.json")
    code, out = run_cli(["count", tmp_path / "d.json"], capsys)
    assert code == EXIT_OK


def test_M_override_replaces_grid_estimate(tmp_path, capsys):
    path = write(tmp_path, small_linear(M_override={"2": 3.0}))
    code, _ = run_cli(["run", path, "--out", tmp_path / "o"], capsys)
    c = json.loads((tmp_path / "o" / "summary.json").read_text())["constants"]
    assert code == EXIT_OK and c["M_hat"] == {"2": 3.0} and c["M_source"] == {"2": "override"}
    sc, base = load_scenario(path)
    delta_2 = build(sc, base).plan.delta_for_group(2, [0.01] * 3)
    assert delta_2 > 0.01  # the rotated coordinates of sensor 3 inflate the group threshold
    assert c["group_error_bound_at_horizon"]["2"] == pytest.approx((2 * 9 + 3) * delta_2)
