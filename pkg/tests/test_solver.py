import math

import numpy as np
import pytest

from _oracles import EXAMPLE_EPS, EXAMPLE_GRID_VALUE, brute_force_primal, finite_instance
from kdro.ambiguity import MinkowskiSum, NormBall, Polytope
from kdro.kernels import Embedding, KernelSpec, gram
from kdro.solver import (DiscreteDistribution, DivergenceError, SolverConfig, SolverError, csa_solve, dual_solve,
                         primal_oracle)

S2 = KernelSpec.gaussian(math.sqrt(2.0))


# --- DiscreteDistribution / SolverConfig ------------------------------------

def test_discrete_distribution_clamps_and_validates():
    d = DiscreteDistribution([[0.0], [1.0]], [1.0 + 5e-10, -5e-10])
    assert d.probs.min() == 0.0 and d.probs.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0], [1.0]], [0.7, 0.7])
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0]], [0.5, 0.5])


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(abs_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=-1.0)


# --- primal oracle ------------------------------------------------------------

def test_oracle_large_radius_puts_mass_on_argmax():
    X = np.array([[0.0], [1.0], [2.5]])
    l = np.array([0.2, 0.9, -0.4])
    res = primal_oracle(l, gram(X, S2), np.array([1.0, 0.0, 0.0]), 10.0)
    assert res.value == pytest.approx(0.9)
    assert res.distribution.probs[1] == pytest.approx(1.0)


def test_oracle_zero_radius_returns_center():
    q = np.array([0.2, 0.5, 0.3])
    l = np.array([1.0, -2.0, 0.5])
    res = primal_oracle(l, gram(np.array([[0.0], [1.0], [2.0]]), S2), q, 0.0)
    assert np.allclose(res.distribution.probs, q)
    assert res.value == pytest.approx(q @ l)


def test_oracle_example_pair():
    X = np.array([[0.0], [2.0]])
    res = primal_oracle([0.0, 1.0], gram(X, S2), [1.0, 0.0], EXAMPLE_EPS)
    assert res.value >= 0.5 - 1e-9
    # (1/2, 1/2) is feasible, so the optimum is at least 1/2
    assert res.bound >= res.value


def test_oracle_against_brute_force_small_supports():
    for s in range(30):
        rng = np.random.default_rng(s)
        m, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        X = rng.uniform(-3, 3, size=(m, d))
        K = gram(X, KernelSpec.gaussian(data=X) if m > 1 else S2)
        l = rng.uniform(-1, 1, m)
        q = rng.dirichlet(np.ones(m)) if s % 2 else np.eye(m)[0]
        eps = float(rng.uniform(0, 1.5))
        assert primal_oracle(l, K, q, eps).value == pytest.approx(brute_force_primal(l, K, q, eps), abs=1e-3)


def test_oracle_monotone_in_radius():
    inst = finite_instance(3)
    K = gram(inst.X, inst.kernel)
    vals = [primal_oracle(inst.l, K, inst.q, e).value for e in np.linspace(0, 2, 15)]
    assert np.all(np.diff(vals) >= -1e-9)


def test_oracle_solution_is_feasible():
    for s in range(10):
        inst = finite_instance(s)
        K = gram(inst.X, inst.kernel)
        res = primal_oracle(inst.l, K, inst.q, inst.eps)
        d = res.distribution.probs - inst.q
        assert d @ K @ d <= inst.eps ** 2 + 1e-9
        assert res.bound >= res.value - 1e-12


def test_oracle_input_errors():
    K = np.eye(2)
    with pytest.raises(ValueError):
        primal_oracle([0.0, 1.0], K, [1.0, 0.0], -0.1)
    with pytest.raises(ValueError):
        primal_oracle([0.0, 1.0], K, [0.7, 0.7], 0.1)
    with pytest.raises(ValueError):
        primal_oracle([0.0, np.inf], K, [1.0, 0.0], 0.1)
    with pytest.raises(ValueError):
        primal_oracle([0.0, 1.0, 2.0], K, [1.0, 0.0], 0.1)


# --- dual solve -----------------------------------------------------------------

def test_dual_constant_loss():
    X = np.linspace(-3, 3, 11)[:, None]
    C = NormBall(Embedding.empirical([[0.0], [1.0]], S2), 0.7)
    sol = dual_solve(lambda x: np.full(len(x), 2.5), np.vstack([X, [[1.0]]]), C)
    assert sol.objective == pytest.approx(2.5, abs=1e-9)
    assert sol.f0 == pytest.approx(2.5, abs=1e-9)


def test_dual_example_grid_value():
    X = np.linspace(-3, 3, 33)[:, None]
    C = NormBall(Embedding.dirac(0.0, S2), EXAMPLE_EPS)
    sol = dual_solve(lambda x: np.maximum(np.abs(x[:, 0]) - 1, 0), X, C)
    assert sol.objective >= 0.5 - 1e-2
    assert sol.objective == pytest.approx(EXAMPLE_GRID_VALUE, abs=1e-4)


def test_dual_weak_duality_and_residuals():
    for s in range(50):
        inst = finite_instance(s)
        sol = dual_solve(inst.l, inst.X, inst.ball)
        primal = primal_oracle(inst.l, gram(inst.X, inst.kernel), inst.q, inst.eps).value
        assert sol.objective >= primal - 1e-3
        assert sol.max_violation <= 1e-6
        assert np.all(sol.active_multipliers >= 0)


def test_dual_multiplier_distribution_matches_objective():
    for s in range(1, 20):
        inst = finite_instance(s)
        sol = dual_solve(inst.l, inst.X, inst.ball)
        assert sol.multiplier_distribution().expect(inst.l) == pytest.approx(sol.objective, abs=1e-2)


def test_dual_polytope_and_minkowski():
    X = np.linspace(-3, 3, 25)[:, None]
    P = Polytope((Embedding.dirac(-1.0, S2), Embedding.dirac(1.0, S2)))
    sol = dual_solve(lambda x: np.sin(x[:, 0]), np.vstack([X, [[-1.0], [1.0]]]), P)
    # the worst case over the hull of two Diracs is the better vertex
    assert sol.objective == pytest.approx(max(np.sin(-1.0), np.sin(1.0)), abs=1e-3)
    # a one-term Minkowski sum is the set itself
    sol_m = dual_solve(lambda x: np.sin(x[:, 0]), np.vstack([X, [[-1.0], [1.0]]]), MinkowskiSum((P,)))
    assert sol_m.objective == pytest.approx(sol.objective, abs=1e-6)


def test_dual_rejects_bad_losses():
    C = NormBall(Embedding.dirac(0.0, S2), 0.1)
    with pytest.raises(ValueError):
        dual_solve([0.0, np.nan], [[0.0], [1.0]], C)
    with pytest.raises(ValueError):
        dual_solve([0.0], [[0.0], [1.0]], C)


# --- cooperative SA -------------------------------------------------------------

def test_csa_unconstrained_quadratic():
    cfg = SolverConfig(max_iters=10_000, step_size=0.5, seed=0)

    def obj(x, rng):
        g = 2 * (x - 1.5) + 0.1 * rng.normal(size=1)
        return float((x[0] - 1.5) ** 2), g

    def con(x, rng):
        return -1.0, np.zeros(1)

    res = csa_solve(obj, con, None, [0.0], cfg)
    assert res.x[0] == pytest.approx(1.5, abs=1e-2)
    assert res.n_objective_steps > 0


def test_csa_feasibility_only():
    # objective 0; constraint E[(1 - x + noise)]_+ <= 0, feasible set x >= 1 + 0.1 (noise bound)
    cfg = SolverConfig(max_iters=10_000, step_size=0.5, seed=1, tol0=0.05)

    def obj(x, rng):
        return 0.0, np.zeros(1)

    def con(x, rng):
        z = rng.uniform(-0.1, 0.1, size=32)
        s = 1.0 - x[0] + z
        return float(np.maximum(s, 0).mean()), np.array([-(s > 0).mean()])

    res = csa_solve(obj, con, None, [-2.0], cfg)
    z = np.random.default_rng(99).uniform(-0.1, 0.1, size=100_000)
    assert np.maximum(1.0 - res.x[0] + z, 0).mean() <= 1e-2


def test_csa_is_deterministic():
    cfg = SolverConfig(max_iters=500, seed=7)

    def obj(x, rng):
        return float(x @ x), 2 * x + rng.normal(size=2)

    def con(x, rng):
        return float(rng.uniform() - 0.5), rng.normal(size=2)

    a = csa_solve(obj, con, None, [1.0, -1.0], cfg)
    b = csa_solve(obj, con, None, [1.0, -1.0], cfg)
    assert np.array_equal(a.x, b.x) and a.history == b.history


def test_csa_oracle_failure_carries_iteration():
    def obj(x, rng):
        return 0.0, np.zeros(1)

    def con(x, rng):
        if x[0] > 0.3:
            raise RuntimeError("boom")
        return 1.0, np.array([-1.0])

    with pytest.raises(SolverError, match="iteration"):
        csa_solve(obj, con, None, [0.0], SolverConfig(max_iters=100, step_size=0.2))


def test_csa_divergence():
    def obj(x, rng):
        return 0.0, np.array([np.inf])

    def con(x, rng):
        return -1.0, np.zeros(1)

    with pytest.raises(DivergenceError) as info:
        csa_solve(obj, con, None, [0.0], SolverConfig(max_iters=10))
    assert info.value.iteration == 1
    assert np.all(np.isfinite(info.value.last_state))
