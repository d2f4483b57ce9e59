import math

import numpy as np
import pytest

from rse.dynamics import CanonicalForm, NoiseSpec, SignalSpec, Constant, simulate
from rse.observers import (ErrorBoundProfile, ObserverBank, ObserverSpec, lyapunov_residual, observer_errors,
                           observer_step, run_bank, synthesize_gain)
from rse.scenarios import builtin_scenario_sec5


@pytest.mark.parametrize("n", range(1, 7))
@pytest.mark.parametrize("theta", [1.0, 10.0, 100.0])
def test_gain_synthesis(n, theta):
    syn = synthesize_gain(n, theta)
    assert lyapunov_residual(syn.P, theta) <= 1e-9
    # closed form of the high-gain correction: binomial(n, k) theta^k
    expected = np.array([math.comb(n, k) * theta**k for k in range(1, n + 1)])
    assert np.allclose(syn.gain, expected, rtol=1e-9)
    # Hankel form of the solution: P[a, b] = (-1)^(a+b) binom(a+b, a) / theta^(a+b+1)
    hankel = np.array([[(-1) ** (a + b) * math.comb(a + b, a) / theta ** (a + b + 1) for b in range(n)]
                       for a in range(n)])
    assert np.allclose(syn.P, hankel, rtol=1e-8, atol=0)


def test_gain_small_cases_by_hand():
    th = 7.0
    assert synthesize_gain(1, th).P[0, 0] == pytest.approx(1 / th)
    assert synthesize_gain(1, th).gain[0] == pytest.approx(th)
    syn = synthesize_gain(2, th)
    assert np.allclose(syn.P, [[1 / th, -1 / th**2], [-1 / th**2, 2 / th**3]], atol=1e-15)
    assert np.allclose(syn.gain, [2 * th, th**2], atol=1e-9)
    with pytest.raises(ValueError):
        synthesize_gain(0, 1.0)
    with pytest.raises(ValueError):
        synthesize_gain(2, 0.0)


def sec5_spec(i, theta=20.0):
    plant, _ = builtin_scenario_sec5()
    return ObserverSpec.design(i, plant.canonical[i - 1], theta)


def test_theta_below_one_rejected():
    with pytest.raises(ValueError):
        sec5_spec(1, theta=0.5)


def test_fixed_point_of_integrator_channel():
    spec = sec5_spec(15)
    y, u = 0.2, 0.3
    z = np.array([0.0])
    for _ in range(5000):
        z = observer_step(spec, z, y, u, 1e-3)
    assert z[0] == pytest.approx(y + u / (2 * spec.theta), abs=1e-12)


def test_zero_correction_matches_open_loop():
    form = CanonicalForm(alpha=lambda z: -2.0 * z[0] - z[1], betas=(lambda z: 0.0, lambda z: 1.0 + z[0] ** 2))
    spec = ObserverSpec.design(1, form, 5.0)
    zero_gain = ObserverSpec(1, form, 5.0, np.zeros(2))
    z = np.array([0.4, -0.1])
    assert np.array_equal(spec.rhs(z, z[0], 0.7), zero_gain.rhs(z, 123.0, 0.7))
    assert np.allclose(spec.rhs(z, z[0], 0.7), [z[1], -2 * z[0] - z[1] + 0.7 * (1 + z[0] ** 2)])


def test_bank_matches_per_sensor_steps():
    plant, d = builtin_scenario_sec5()
    traj = simulate(plant, d.input, d.attack_spec(), NoiseSpec(0.01, 1), 0.2, 1e-3)
    bank = ObserverBank(plant, 20.0)
    est = bank.run(traj)
    for i in (1, 7, 15):
        spec = bank.specs[i - 1]
        z = est.values[0, i - 1:i].copy()
        for k in range(len(traj.times) - 1):
            z = observer_step(spec, z, traj.outputs[k, i - 1], traj.inputs[k], traj.step)
        assert z[0] == pytest.approx(est.values[-1, i - 1], abs=1e-14)


def test_noise_free_bank_tracks_truth():
    plant, d = builtin_scenario_sec5()
    traj = simulate(plant, d.input, SignalSpec(), NoiseSpec(), 10.0, 1e-3)
    est = run_bank(plant, traj, 20.0)
    assert np.array_equal(est.values[0], plant.phi(traj.states[0]))
    assert observer_errors(plant, traj, est).max() <= 1e-3


def test_noisy_bank_error_within_three_noise_bounds():
    plant, d = builtin_scenario_sec5()
    traj = simulate(plant, d.input, SignalSpec(), NoiseSpec(0.01, 0), 10.0, 1e-3)
    err = observer_errors(plant, traj, run_bank(plant, traj, 20.0))
    assert err[traj.times >= 1.0, 0].max() <= 0.02
    assert err[traj.times >= 2.0].max() <= 0.03


def test_constant_offset_gives_first_order_lag():
    plant, d = builtin_scenario_sec5()
    traj = simulate(plant, d.input, SignalSpec({1: Constant(1.0)}), NoiseSpec(), 3.0, 1e-3)
    err = run_bank(plant, traj, 20.0).values[:, 0] - plant.phi(traj.states)[:, 0]
    # the plant output drifts slowly, so allow a small tracking lag on top of the offset
    assert err[-1] == pytest.approx(20.0 / 21.0, abs=1e-4)


def test_channels_are_decoupled():
    plant, d = builtin_scenario_sec5()
    a = simulate(plant, d.input, d.attack_spec(0.5), NoiseSpec(0.01, 3), 6.0, 1e-3)
    b = simulate(plant, d.input, d.attack_spec(50.0), NoiseSpec(0.01, 3), 6.0, 1e-3)
    ea, eb = run_bank(plant, a, 20.0), run_bank(plant, b, 20.0)
    assert np.array_equal(ea.values[:, 4:], eb.values[:, 4:])
    assert not np.array_equal(ea.values[:, :4], eb.values[:, :4])


def test_error_bound_profile():
    prof = ErrorBoundProfile(2.0, 16.0, 0.01)
    t = np.linspace(0, 5, 200)
    v = prof(t)
    assert np.all(np.diff(v) <= 0) and np.all(v >= 0.01)
    assert prof(0.0) == 2.0 and prof(5.0) == 0.01
    errs = 0.5 * np.exp(-2.0 * t)
    cal = ErrorBoundProfile.calibrate(t, errs, 16.0, 0.01)
    assert np.all(cal(t) >= errs - 1e-15)
    assert cal.coefficient == pytest.approx(0.5, rel=1e-9)
    noisy = errs + 0.004 * np.sin(7 * t) ** 2
    assert np.all(ErrorBoundProfile.calibrate(t, noisy, 16.0, 0.01)(t) >= noisy - 1e-15)


def test_estimate_csv(tmp_path):
    plant, d = builtin_scenario_sec5()
    traj = simulate(plant, d.input, SignalSpec(), NoiseSpec(), 0.002, 1e-3)
    est = run_bank(plant, traj, 20.0)
    est.to_csv(tmp_path / "e.csv")
    header = (tmp_path / "e.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["t", "zhat_1_1", "zhat_2_1"] and header[-1] == "zhat_20_1"
