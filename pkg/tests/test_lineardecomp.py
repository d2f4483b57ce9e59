
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rse.config import read_matrix
from rse.core import BlockLayout
from rse.lineardecomp import (LinearSystem, block_diagonalize, decomposition_equivalence, factor_relprime,
                              matrix_polynomial, plan_from_linear, rank_redundant)


def diag_plan(q=0):
    C = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return plan_from_linear(LinearSystem(np.diag([-1.0, -2.0]), C), q)


def test_diagonal_fixture_groups():
    plan = diag_plan()
    assert plan.l == 2 and plan.groups == [(1, 3), (2, 3)]
    s3 = plan.sensors[2]
    assert s3.n_i == 2 and s3.N_i == (1, 2) and s3.ranks == {1: 1, 2: 1}
    d = plan.to_dict()
    assert d["groups"] == [[1, 3], [2, 3]] and d["sensors"][0]["N_i"] == [1]
    assert d["blocks"][0]["spectrum"] == [[-1.0, 0.0]]


def test_clusters_keep_conjugates_and_order_by_real_part():
    A = np.array([[-1.0, 2.0, 0.0], [-2.0, -1.0, 0.0], [0.0, 0.0, -0.5]])
    cl = factor_relprime(A)
    assert [len(c) for c in cl] == [1, 2]
    assert cl[0][0] == pytest.approx(-0.5)
    assert sorted(np.round(cl[1].imag, 9)) == [-2.0, 2.0]
    assert [c[0] for c in factor_relprime(np.diag([-3.0, -1.0, -2.0]))] == [-1.0, -2.0, -3.0]


def test_jordan_block_is_one_cluster():
    A = np.array([[-1.0, 1.0], [0.0, -1.0]])
    cl = factor_relprime(A)
    assert len(cl) == 1
    bd = block_diagonalize(A, cl)
    assert bd.l == 1 and np.array_equal(bd.T_x, np.eye(2))


def test_ill_conditioned_split_warns():
    A = np.array([[-1.0, 1.0], [0.0, -1.0 - 1e-8]])
    with pytest.warns(RuntimeWarning, match="ill-conditioned"):
        block_diagonalize(A, factor_relprime(A, 1e-12))


def test_matrix_polynomial_of_conjugate_pair_is_real():
    A = np.array([[-1.0, 2.0], [-2.0, -1.0]])
    P = matrix_polynomial(A, [-1 + 2j, -1 - 2j])
    # Cayley-Hamilton: the characteristic polynomial annihilates A
    assert np.allclose(P, 0.0, atol=1e-12)


def random_system(seed, n, p):
    rng = np.random.default_rng(seed)
    eig = rng.permutation(np.arange(1, n + 1))[:n] * -0.7
    V = rng.normal(size=(n, n)) + 2 * np.eye(n)
    A = V @ np.diag(eig) @ np.linalg.inv(V)
    # sparse rows in eigen-coordinates so groups differ; each row keeps one nonzero entry
    C = rng.integers(-2, 3, size=(p, n)).astype(float) * (rng.random((p, n)) < 0.5)
    C[np.arange(p), rng.integers(0, n, size=p)] = rng.choice([-2.0, -1.0, 1.0, 2.0], size=p)
    C = C @ np.linalg.inv(V)
    return A, C


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(3, 7))
def test_decomposition_invariants(seed, n, p):
    A, C = random_system(seed, n, p)
    plan = plan_from_linear(LinearSystem(A, C), 0)
    bd = plan.bd
    assert bd.residual(A) <= 1e-8 * max(1.0, np.abs(A).max())
    assert np.allclose(bd.T_x @ bd.T_x_inv, np.eye(n), atol=1e-9)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    Phi = plan.phi_matrix()
    if plan.unobserved_blocks():
        with pytest.raises(ValueError, match="not observable"):
            plan.group_plan()
        return
    gp = plan.group_plan()
    layout = BlockLayout(tuple(s.n_i for s in plan.sensors))
    for j in range(1, plan.l + 1):
        # the rotated estimates of group j depend on x only through the sub-state x^j
        xi = gp.local_estimate(j, Phi @ x, layout)
        assert np.allclose(xi, plan.psi_state_matrix(j) @ x, atol=1e-8 * max(1.0, np.abs(xi).max()))
        assert np.allclose(plan.psi_state_matrix(j) @ bd.T_x_inv[:, bd.columns(j)] @ bd.T_x[bd.columns(j)],
                           plan.psi_state_matrix(j), atol=1e-8)
    # every sensor lands in at least one group and its n_i matches the observability rank
    for s in plan.sensors:
        assert s.N_i
        O = np.vstack([C[s.sensor - 1] @ np.linalg.matrix_power(A, k) for k in range(n)])
        assert s.n_i == np.linalg.matrix_rank(O, tol=1e-9 * np.abs(O).max())


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(4, 7))
def test_inverse_round_trip(seed, n, p):
    A, C = random_system(seed, n, p)
    plan = plan_from_linear(LinearSystem(A, C), 0)
    if np.linalg.matrix_rank(plan.phi_matrix()) < n:
        return  # unobservable plant; no left inverse
    x = np.random.default_rng(seed + 1).normal(size=n)
    vals = [plan.psi_state_matrix(j) @ x for j in range(1, plan.l + 1)]
    assert np.allclose(plan.inverse(vals, plan.groups), x, atol=1e-7)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.integers(2, 3), st.integers(3, 6), st.integers(0, 2))
def test_group_redundancy_matches_global_redundancy(seed, n, p, k):
    A, C = random_system(seed, n, p)
    plan = plan_from_linear(LinearSystem(A, C), 0)
    assert decomposition_equivalence(plan, min(k, p - 1))["agree"]


def test_rank_redundant_by_hand():
    e1, e2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
    assert rank_redundant([e1, e1, e2, e2], 1)
    assert not rank_redundant([e1, e1, e2, e2], 2)
    assert rank_redundant([e1, e2], 0)


def test_analog_counts(scenarios_dir):
    A = read_matrix(scenarios_dir / "matrices" / "analog_A.txt")
    C = read_matrix(scenarios_dir / "matrices" / "analog_C.txt")
    plan = plan_from_linear(LinearSystem(A, C), 4)
    # the real eigenvalue -0.5 has the larger real part and comes first
    assert plan.groups == [tuple(range(11, 21)), tuple(range(1, 11))]
    assert plan.complexity["global"] == 4845 and plan.complexity["local"] == 420
    assert [b.shape[0] for b in plan.bd.blocks] == [1, 2]
    assert decomposition_equivalence(plan, 8)["agree"]


def test_invalid_systems():
    with pytest.raises(ValueError):
        LinearSystem(np.eye(2), np.ones((1, 3)))
    with pytest.raises(ValueError):
        plan_from_linear(LinearSystem(-np.eye(2), np.array([[1.0, 0.0], [0.0, 0.0]])), 0)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(2, 5))
def test_stacked_blocks_sum_to_observability_map(seed, n, p):
    A, C = random_system(seed, n, p)
    plan = plan_from_linear(LinearSystem(A, C), 0)
    bd = plan.bd
    x = np.random.default_rng(seed).normal(size=n)
    xs = [bd.T_x[bd.columns(j)] @ x for j in range(1, plan.l + 1)]
    for s in plan.sensors:
        O = np.vstack([C[s.sensor - 1] @ np.linalg.matrix_power(A, k) for k in range(n)])
        total = sum(s.O_blocks[j] @ xs[j - 1] for j in range(1, plan.l + 1))
        assert np.allclose(total, O @ x, atol=1e-9 * max(1.0, np.abs(O @ x).max()))
