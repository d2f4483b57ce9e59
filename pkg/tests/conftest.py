import time
from pathlib import Path

import pytest
from hypothesis import settings

from rse.config import build, load_scenario
from rse.pipeline import run

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def load_built(name, **kw):
    sc, base = load_scenario(SCENARIOS / name)
    return build(sc, base, **kw)


def timed_run(built):
    t0 = time.perf_counter()
    res = run(built)
    res.elapsed = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def scenarios_dir():
    return SCENARIOS


@pytest.fixture(scope="session")
def sec5_run():
    return timed_run(load_built("sec5.json"))


@pytest.fixture(scope="session")
def sec5_run_strong():
    return timed_run(load_built("sec5.json", attack_amplitude=50.0))


@pytest.fixture(scope="session")
def sec5_run_clean():
    return timed_run(load_built("sec5_attack_free.json"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
