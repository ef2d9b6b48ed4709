import numpy as np
import pytest

from _oracles import EXAMPLE_EPS, EXAMPLE_GRID_VALUE
from kdro.ambiguity import NormBall, Polytope
from kdro.batch import (KdroProblem, certify, constraint_points, default_epsilon, feasible_mixtures, grid_points,
                        ipm_dual_solve, relaxed_solve, solve_kdro, worst_case_risk)
from kdro.cli import example_problem
from kdro.kernels import Embedding, KernelSpec, mmd
from kdro.models import Custom, HingeShift, UncertainLeastSquares


def _quadratic_loss():
    return Custom(lambda th, xi: np.full(len(xi), th[0] ** 2), lambda th, xi: np.full((len(xi), 1), 2 * th[0]))


def _ls_problem(seed, eps, d=1):
    rng = np.random.default_rng(seed)
    loss = UncertainLeastSquares.random(6, 2, d, rng)
    data = rng.uniform(-1, 1, size=(8, d))
    return loss, data, KdroProblem.norm_ball(loss, data, -1.5, 1.5, eps, KernelSpec.gaussian(data=data))


def test_problem_validation():
    with pytest.raises(ValueError):
        KdroProblem.norm_ball(HingeShift(), [[0.0]], [1.0], [-1.0], 0.1)
    with pytest.raises(ValueError):
        KdroProblem.norm_ball(HingeShift(), [[5.0]], [-1.0], [1.0], 0.1)


def test_constraint_points_contain_data_and_grid():
    P = example_problem()
    X = constraint_points(P, 33)
    assert len(X) == 33  # 0 lies on the grid, so no duplicate
    assert np.any(np.all(X == 0.0, axis=1))
    assert grid_points([0, 0], [1, 1], 3).shape == (9, 2)


def test_theta_squared_minimizer():
    P = KdroProblem.norm_ball(_quadratic_loss(), [[0.0], [1.0]], -2, 2, 0.3, KernelSpec.gaussian(1.0))
    res = solve_kdro(P, theta0=[1.3], points_per_dim=9)
    assert abs(res.theta[0]) <= 1e-3
    assert res.solution.objective == pytest.approx(0.0, abs=1e-5)
    assert not res.local


def test_example_full_vs_relaxed():
    P = example_problem()
    full = certify([0.0], P)
    assert full.dual_value >= 0.5 - 1e-2
    assert full.dual_value == pytest.approx(EXAMPLE_GRID_VALUE, abs=1e-4)
    rel = relaxed_solve(P, theta0=[0.0])
    assert rel.objective == pytest.approx(0.0, abs=1e-6)
    assert rel.objective <= full.dual_value


def test_certificate_fields_consistent():
    P = example_problem()
    cert = certify([0.0], P)
    W = cert.worst_case_dist
    # the worst case lies in the ball and attains the bound up to the gap
    assert mmd(W.embedding(P.kernel), P.ambiguity.center) <= EXAMPLE_EPS + 1e-6
    assert cert.feasibility_slack >= -1e-6
    assert cert.gap_estimate == pytest.approx(cert.dual_value - W.expect(HingeShift().value([0.0], W.support)))
    assert 0 <= cert.gap_estimate <= 1e-2
    assert cert.oracle_value == pytest.approx(cert.dual_value, abs=1e-3)


def test_worst_case_risk_matches_certificate():
    P = example_problem()
    assert worst_case_risk([0.0], P) == pytest.approx(certify([0.0], P).dual_value, abs=1e-3)
    with pytest.raises(ValueError):
        worst_case_risk([0.0], KdroProblem(HingeShift(), -3, 3, [[0.0]], Polytope((P.ambiguity.center,))))


def test_refinement_is_monotone():
    # more constraint points can only raise the discretized worst case
    P = example_problem()
    vals = [certify([0.0], P, points_per_dim=n).dual_value for n in (5, 9, 17, 33)]
    assert np.all(np.diff(vals) >= -1e-6)
    v_ref = certify([0.0], P, refine=[[1.4], [-2.2]]).dual_value
    assert v_ref >= vals[-1] - 1e-6


def test_zero_radius_is_saa():
    loss, data, P = _ls_problem(0, 0.0)
    res = solve_kdro(P)
    saa = loss.value(loss.erm(data), data).mean()
    assert res.solution.objective == pytest.approx(saa, abs=1e-3)


def test_kdro_beats_erm_in_worst_case():
    loss, data, P = _ls_problem(1, 0.4)
    res = solve_kdro(P)
    th_erm = loss.erm(data)
    assert worst_case_risk(res.theta, P) <= worst_case_risk(th_erm, P) + 1e-3


def test_ipm_equals_norm_ball():
    loss, data, P = _ls_problem(2, 0.3)
    sol = ipm_dual_solve(P)
    assert sol.extras["ipm_objective"] == pytest.approx(sol.objective, abs=1e-3)
    assert sol.extras["ipm_lambda"] >= 0
    with pytest.raises(NotImplementedError):
        ipm_dual_solve(P, function_class="lipschitz")


def test_default_epsilon():
    k = KernelSpec.gaussian(1.0)
    assert default_epsilon([[0.3]], k) == 0.0
    x = np.random.default_rng(0).normal(size=(40, 1))
    e1 = default_epsilon(x, k, rng=np.random.default_rng(1))
    assert e1 == default_epsilon(x, k, rng=np.random.default_rng(1))
    assert 0 < e1 < np.sqrt(2)


def test_feasible_mixtures_are_members():
    P = example_problem()
    X = constraint_points(P)
    for Q in feasible_mixtures(P.ambiguity, X, 50, np.random.default_rng(0)):
        assert mmd(Q.embedding(P.kernel), P.ambiguity.center) <= EXAMPLE_EPS + 1e-6
    k = P.kernel
    poly = Polytope((Embedding.dirac(-1.5, k), Embedding.dirac(1.5, k)))
    assert len(feasible_mixtures(poly, X, 10, np.random.default_rng(1))) == 10
    with pytest.raises(ValueError):
        feasible_mixtures(NormBall(Embedding.dirac(0.1234, k), 0.1), X, 5, np.random.default_rng(0))
