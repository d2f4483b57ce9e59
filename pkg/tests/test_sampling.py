import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rse.core import BlockLayout
from rse.sampling import (Box, InfBall, VectorMap, build_grid, distance_to_cloud, estimate_lipschitz, image_cloud,
                          iter_pairs, max_ratio)
from rse.scenarios import SEC5_WEIGHTS, sec5_group_map


def identity_map(n=1):
    return VectorMap(f"id{n}", n, BlockLayout.scalar(n), lambda x: x, lambda x: np.eye(n))


def linear_map(M, sizes=None, name="lin"):
    M = np.asarray(M, dtype=float)
    sizes = sizes or (1,) * M.shape[0]
    return VectorMap(name, M.shape[1], BlockLayout(sizes), lambda x: np.asarray(x) @ M.T, lambda x: M)


def grid_distance(points, x):
    return np.min(np.max(np.abs(points[None, :, :] - x[:, None, :]), axis=2), axis=1)


def test_grid_examples():
    g = build_grid(Box((0.0,), (1.0,)), 0.25)
    assert np.allclose(g.points[:, 0], [0.25, 0.75])
    g = build_grid(InfBall((0.0, 0.0, 0.0), 0.5), 0.5)
    assert g.points.tolist() == [[0.0, 0.0, 0.0]]
    g = build_grid(Box((0.0, 0.0), (1.0, 1.0)), 0.25)
    assert len(g) == 4
    x = np.random.default_rng(0).uniform(0, 1, size=(200, 2))
    assert grid_distance(g.points, x).max() <= 0.25


def test_grid_cap_and_delta_checked():
    with pytest.raises(ValueError):
        build_grid(Box((0.0, 0.0), (1.0, 1.0)), 1e-4, cap=1000)
    with pytest.raises(ValueError):
        build_grid(Box((0.0,), (1.0,)), 0.0)


@settings(max_examples=25)
@given(st.lists(st.floats(0.1, 2.0), min_size=1, max_size=3), st.floats(0.05, 0.5), st.booleans(), st.integers(0, 99))
def test_grid_covers_the_set(widths, delta, ball, seed):
    n = len(widths)
    spec = InfBall(tuple(np.zeros(n)), widths[0]) if ball else Box(tuple(np.zeros(n)), tuple(widths))
    g = build_grid(spec, delta)
    assert np.all(spec.contains(g.points))
    x = spec.sample(np.random.default_rng(seed), 1000)
    assert grid_distance(g.points, x).max() <= delta + 1e-12


def test_image_cloud_cached_and_coherent():
    g = build_grid(Box((0.0,), (1.0,)), 0.25)
    c = image_cloud(g, identity_map())
    assert np.allclose(c.points[:, 0], [0.25, 0.75])
    assert image_cloud(g, identity_map()) is c
    m = linear_map(np.arange(6.0).reshape(3, 2), name="lin3")
    g2 = build_grid(Box((0.0, 0.0), (1.0, 1.0)), 0.1)
    full = image_cloud(g2, m)
    part = image_cloud(g2, m, (1, 3))
    assert np.array_equal(part.points, full.points[:, [0, 2]])


def test_sec5_group1_cloud_in_two_dim_subspace():
    g = build_grid(InfBall((0.0, 0.0, 0.0), 0.5), 0.1)
    c = image_cloud(g, sec5_group_map(1))
    O = np.stack([np.ones(10), SEC5_WEIGHTS], axis=1)
    resid = c.points.T - O @ np.linalg.lstsq(O, c.points.T, rcond=None)[0]
    assert np.abs(resid).max() < 1e-12
    assert np.linalg.matrix_rank(c.points) == 2


def test_distance_to_cloud_examples():
    g = build_grid(Box((0.0,), (2.0,)), 0.5)  # points 0.5, 1.5
    c = image_cloud(g, identity_map())
    d, x, k = distance_to_cloud(np.array([1.0]), c)
    assert d == 0.5 and k == 0 and x[0] == 0.5  # tie goes to the first grid point
    assert distance_to_cloud(np.array([1.5]), c)[0] == 0.0
    with pytest.raises(ValueError):
        distance_to_cloud(np.array([1.0, 2.0]), c)


def test_distance_to_cloud_matches_brute_force():
    rng = np.random.default_rng(3)
    g = build_grid(Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), 0.05)  # 1000 points
    m = linear_map(rng.normal(size=(4, 3)), name="rand4x3")
    c = image_cloud(g, m)
    for _ in range(20):
        z = rng.normal(size=4)
        best = min(max(abs(a - b) for a, b in zip(z, p)) for p in c.points.tolist())
        d, _, k = distance_to_cloud(z, c)
        assert d == best
        assert d <= np.max(np.abs(z - c.points[rng.integers(len(c))]))


def test_lipschitz_estimates():
    g = build_grid(Box((0.0, 0.0), (1.0, 1.0)), 0.1)
    M = np.array([[1.0, -2.0], [0.5, 0.25]])
    est = estimate_lipschitz(linear_map(M, name="lipM"), None, g)
    assert est == pytest.approx(np.abs(M).sum(axis=1).max())  # diagonal lattice pairs attain it
    const = VectorMap("const", 2, BlockLayout((1,)), lambda x: np.zeros(np.shape(x)[:-1] + (1,)))
    assert estimate_lipschitz(const, None, g) == 0.0
    assert estimate_lipschitz(identity_map(2), None, g) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        estimate_lipschitz(identity_map(3), None, build_grid(InfBall((0.0, 0.0, 0.0), 0.5), 0.5))


def test_lipschitz_monotone_in_grid():
    f = VectorMap("sq", 1, BlockLayout((1,)), lambda x: x**2)
    coarse = build_grid(Box((0.0,), (1.0,)), 0.1)
    fine_pts = np.concatenate([coarse.points, [[0.97], [0.99]]])
    from rse.sampling import SampleGrid
    fine = SampleGrid(coarse.spec, coarse.delta, fine_pts)
    assert estimate_lipschitz(f, None, fine) >= estimate_lipschitz(f, None, coarse)


def test_pair_enumeration():
    pairs = np.concatenate([np.stack(p, 1) for p in iter_pairs(7)])
    assert len(pairs) == 21 and len({tuple(r) for r in pairs.tolist()}) == 21
    assert np.all(pairs[:, 0] < pairs[:, 1])
    sampled = np.concatenate([np.stack(p, 1) for p in iter_pairs(100, cap=50, seed=1)])
    again = np.concatenate([np.stack(p, 1) for p in iter_pairs(100, cap=50, seed=1)])
    assert len(sampled) == 50 and np.array_equal(sampled, again)
    assert np.all(sampled[:, 0] < sampled[:, 1])
    assert max_ratio(np.array([[0.0], [1.0]]), np.array([[0.0], [3.0]])) == 3.0


def test_finite_difference_jacobian():
    f = VectorMap("fd", 2, BlockLayout((2,)), lambda x: np.stack([np.sin(x[..., 0]), x[..., 0] * x[..., 1]], -1))
    x = np.array([0.3, -0.7])
    J = f.jac(x)
    assert np.allclose(J, [[np.cos(0.3), 0], [-0.7, 0.3]], atol=1e-8)


def test_cloud_csv(tmp_path):
    g = build_grid(Box((0.0,), (1.0,)), 0.25)
    c = image_cloud(g, linear_map([[2.0]], name="two"))
    c.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "state_1,image_1"
    assert lines[1] == "0.25,0.5"
