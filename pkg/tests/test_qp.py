import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwmpc.qp import QpProblem, QpStatus, kkt_max, kkt_residuals, solve_qp, split_l1
from pwmpc.validation import enumerate_qp, random_small_qp


def test_active_bound():
    res = solve_qp(QpProblem(H=[[2.0]], g=[0.0], A_ineq=[[-1.0]], b_ineq=[-1.0]))
    assert res.status == QpStatus.SUCCESS
    assert res.x[0] == pytest.approx(1.0, abs=1e-9)
    assert res.objective == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_array_equal(res.active_set, [0])


def test_unconstrained_stationary_point():
    res = solve_qp(QpProblem(H=2 * np.eye(2), g=[-2.0, -4.0]))
    np.testing.assert_allclose(res.x, [1.0, 2.0], atol=1e-10)


def test_infeasible_pair():
    res = solve_qp(QpProblem(H=[[1.0]], g=[0.0], A_ineq=[[1.0], [-1.0]], b_ineq=[0.0, -1.0]))
    assert res.status == QpStatus.INFEASIBLE
    assert not res.success


def test_crossed_bounds_infeasible():
    res = solve_qp(QpProblem(H=[[1.0]], g=[0.0], lb=[1.0], ub=[0.0]))
    assert res.status == QpStatus.INFEASIBLE


def test_unbounded_lp():
    res = solve_qp(QpProblem(H=None, g=[-1.0, 0.0], A_ineq=[[0.0, 1.0]], b_ineq=[1.0]))
    assert res.status == QpStatus.UNBOUNDED


def test_lp_vertex():
    # max x + y over the unit simplex corner region.
    p = QpProblem(H=None, g=[-1.0, -2.0], A_ineq=[[1.0, 1.0]], b_ineq=[1.0], lb=[0.0, 0.0])
    res = solve_qp(p)
    assert res.status == QpStatus.SUCCESS
    np.testing.assert_allclose(res.x, [0.0, 1.0], atol=1e-9)


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(H=[[1.0, 2.0], [0.0, 1.0]], g=[0.0, 0.0])
    with pytest.raises(ValueError):
        QpProblem(H=[[-1.0]], g=[0.0])
    with pytest.raises(ValueError):
        QpProblem(H=np.eye(2), g=[0.0, 0.0], A_ineq=np.ones((2, 3)), b_ineq=[0, 0])
    with pytest.raises(ValueError):
        QpProblem(H=np.eye(2), g=[0.0, 0.0], lb=[0.0])


def test_enumeration_oracle_on_known_problem():
    p = QpProblem(H=2 * np.eye(2), g=[-2.0, -4.0], A_ineq=[[1.0, 1.0]], b_ineq=[1.0])
    x, f = enumerate_qp(p)
    np.testing.assert_allclose(x, [0.0, 1.0], atol=1e-12)
    assert f == pytest.approx(-3.0)


def test_random_qps_against_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(150):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(0, 9 - min(n, 4)))
        p = random_small_qp(rng, n=n, m=m)
        _, f_ref = enumerate_qp(p)
        res = solve_qp(p)
        assert res.status == QpStatus.SUCCESS
        assert kkt_max(res.kkt) < 1e-8
        assert abs(res.objective - f_ref) < 1e-8 * max(1.0, abs(f_ref))


def test_kkt_reported_matches_recomputed():
    rng = np.random.default_rng(3)
    p = random_small_qp(rng, n=4, m=3)
    res = solve_qp(p)
    again = kkt_residuals(p, res.x, res.z_ineq, res.z_lb, res.z_ub)
    assert kkt_max(again) == pytest.approx(kkt_max(res.kkt))
    assert kkt_max(again) < 1e-8


def test_scaling_equivariance():
    rng = np.random.default_rng(11)
    p = random_small_qp(rng, n=4, m=3)
    lam = 37.0
    q = QpProblem(H=lam * p.H, g=lam * p.g, A_ineq=p.A_ineq, b_ineq=p.b_ineq, lb=p.lb, ub=p.ub)
    a, b = solve_qp(p), solve_qp(q)
    np.testing.assert_allclose(a.x, b.x, atol=1e-7)
    assert b.objective == pytest.approx(lam * a.objective, rel=1e-8, abs=1e-8)


def test_deterministic():
    rng = np.random.default_rng(5)
    p = random_small_qp(rng, n=5, m=4)
    a, b = solve_qp(p), solve_qp(p)
    assert a.x.tobytes() == b.x.tobytes()
    assert a.objective == b.objective


def test_warm_active_set_gives_same_answer():
    rng = np.random.default_rng(9)
    p = random_small_qp(rng, n=5, m=5)
    cold = solve_qp(p)
    warm = solve_qp(p, active_set=cold.active_set, x0=cold.x)
    assert warm.status == QpStatus.SUCCESS
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)


def test_max_iter_flag():
    rng = np.random.default_rng(2)
    p = random_small_qp(rng, n=6, m=3)
    res = solve_qp(p, max_iter=1, classify=False)
    assert res.status in (QpStatus.MAX_ITER, QpStatus.SUCCESS)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_success_implies_small_kkt(seed):
    rng = np.random.default_rng(seed)
    p = random_small_qp(rng)
    res = solve_qp(p)
    if res.success:
        assert kkt_max(res.kkt) < 1e-8


# 1-norm splitting.

def _solve_l1(w, H=None, g=None, A=None, b=None, lb=None, ub=None):
    sp = split_l1(w, len(np.atleast_1d(w)) if g is None else len(g))
    res = solve_qp(sp.lift(H, g, A=A, b=b, lb=lb, ub=ub))
    return sp, res


def test_l1_with_lower_limit():
    sp, res = _solve_l1([1.0], A=[[-1.0]], b=[-2.0])
    assert sp.recombine(res.x)[0] == pytest.approx(2.0, abs=1e-8)
    assert res.objective == pytest.approx(2.0, abs=1e-8)


def test_l1_unconstrained_is_zero():
    sp, res = _solve_l1([1.0], lb=[-5.0], ub=[5.0])
    assert abs(sp.recombine(res.x)[0]) < 1e-8


def test_l1_complementary_parts():
    sp, res = _solve_l1([0.5, 1.0], H=np.eye(2), g=[-2.0, 3.0])
    z = res.x
    assert np.all(z[:2] * z[2:] < 1e-8)
    U = sp.recombine(z)
    np.testing.assert_allclose(U, [1.5, -2.0], atol=1e-8)
    f = 0.5 * U @ U + np.array([-2.0, 3.0]) @ U + np.array([0.5, 1.0]) @ np.abs(U)
    assert res.objective == pytest.approx(f, abs=1e-8)


def test_l1_normalize_cancels_overlap():
    sp = split_l1([1.0, 1.0])
    np.testing.assert_allclose(sp.normalize([3.0, 1.0, 1.0, 2.0]), [2.0, 0.0, 0.0, 1.0])


def test_l1_rejects_bad_input():
    with pytest.raises(ValueError):
        split_l1([-1.0])
    with pytest.raises(ValueError):
        split_l1([1.0, 2.0], dim=3)
    with pytest.raises(ValueError):
        split_l1([1.0]).lift(None, [0.0], lb=[1.0], ub=[2.0])


def test_l1_against_grid_oracle():
    rng = np.random.default_rng(4)
    grid = np.linspace(-3, 3, 121)
    for _ in range(10):
        w = rng.uniform(0, 2, 2)
        R = rng.normal(size=(2, 2))
        H = R @ R.T + 0.5 * np.eye(2)
        g = rng.normal(size=2) * 2
        sp, res = _solve_l1(w, H=H, g=g, lb=[-3, -3], ub=[3, 3])
        best = min(0.5 * np.array(u) @ H @ np.array(u) + g @ np.array(u) + w @ np.abs(u)
                   for u in itertools.product(grid, grid))
        # The lattice optimum can only be worse than the continuous one.
        assert res.objective <= best + 1e-9
        assert res.objective >= best - 0.05 * (1 + abs(best))
