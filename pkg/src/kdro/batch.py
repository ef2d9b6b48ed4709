"""Batch kernel DRO: an outer subgradient loop on theta around the discretized dual.

The inner problem at fixed theta is ``solver.dual_solve`` over constraint
points made of the data, a uniform grid on the domain box and optional
refinement points. Imposing the constraint only at the data points is unsound
(see ``relaxed_solve``), so the grid is not optional.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ambiguity import AmbiguitySet, NormBall, Polytope
from .kernels import Embedding, KernelSpec, as_points, gram, mmd
from .models import LossSpec
from .solver import DiscreteDistribution, DualSolution, SolverConfig, dual_solve, primal_oracle

log = logging.getLogger(__name__)

DEFAULT_GRID = 33


@dataclass(eq=False)
class KdroProblem:
    loss: LossSpec
    lo: np.ndarray
    hi: np.ndarray
    data: np.ndarray
    ambiguity: AmbiguitySet

    def __post_init__(self):
        self.data = as_points(self.data)
        d = self.data.shape[1]
        self.lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (d,)).copy()
        self.hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (d,)).copy()
        if np.any(self.lo >= self.hi):
            raise ValueError(f"empty domain box lo={self.lo} hi={self.hi}")
        if np.any(self.data < self.lo - 1e-12) or np.any(self.data > self.hi + 1e-12):
            raise ValueError("domain box does not contain every data point")

    @property
    def kernel(self) -> KernelSpec:
        return self.ambiguity.kernel

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @classmethod
    def norm_ball(cls, loss, data, lo, hi, epsilon=None, kernel=None, seed=0):
        """Norm-ball problem around the empirical embedding.

        Missing pieces get defaults: median-heuristic Gaussian bandwidth and a
        bootstrap epsilon.
        """
        data = as_points(data)
        kernel = kernel or KernelSpec.gaussian(data=data)
        if epsilon is None:
            epsilon = default_epsilon(data, kernel, rng=np.random.default_rng(seed))
        return cls(loss, lo, hi, data, NormBall(Embedding.empirical(data, kernel), float(epsilon)))


def default_epsilon(data, kernel: KernelSpec, level=0.95, n_boot=200, rng=None) -> float:
    """Bootstrap quantile of the MMD between random half-splits of the data."""
    X = as_points(data)
    n = len(X)
    if n < 2:
        log.warning("cannot bootstrap epsilon from %d sample(s); using 0", n)
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    K = gram(X, kernel)
    vals = np.empty(n_boot)
    for b in range(n_boot):
        perm = rng.permutation(n)
        a, c = perm[: n // 2], perm[n // 2 :]
        w = np.zeros(n)
        w[a] = 1.0 / len(a)
        w[c] -= 1.0 / len(c)
        vals[b] = np.sqrt(max(w @ K @ w, 0.0))
    return float(np.quantile(vals, level))


def grid_points(lo, hi, points_per_dim=DEFAULT_GRID) -> np.ndarray:
    axes = [np.linspace(a, b, points_per_dim) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _unique_rows(X, decimals=12):
    _, idx = np.unique(np.round(X, decimals), axis=0, return_index=True)
    return X[np.sort(idx)]


def constraint_points(problem: KdroProblem, points_per_dim=DEFAULT_GRID, refine=None) -> np.ndarray:
    """Data, embedding supports, a uniform grid and optional refinement points."""
    parts = [problem.data]
    parts += [e.points for e in problem.ambiguity.embeddings()]
    if points_per_dim and points_per_dim > 0:
        parts.append(grid_points(problem.lo, problem.hi, points_per_dim))
    if refine is not None:
        parts.append(as_points(refine, dim=problem.dim))
    return _unique_rows(np.vstack(parts))


@dataclass
class Certificate:
    dual_value: float
    worst_case_dist: DiscreteDistribution
    gap_estimate: float
    feasibility_slack: float
    oracle_value: float = float("nan")
    source: str = "multipliers"


@dataclass
class KdroResult:
    theta: np.ndarray
    solution: DualSolution
    certificate: Certificate
    converged: bool
    local: bool
    history: list = field(default_factory=list)


def _center_weights(C: NormBall, X: np.ndarray) -> np.ndarray | None:
    """Center weights re-indexed onto the rows of X, or None if a point is missing."""
    return _on_points(C.center, X)


def _slack(C: AmbiguitySet, dist: DiscreteDistribution) -> float:
    mem = C.membership(dist.embedding(C.kernel))
    if mem.inside is None:
        return float("nan")
    return -float(mem.violation)


def _certificate(problem: KdroProblem, sol: DualSolution, cfg: SolverConfig) -> Certificate:
    C = problem.ambiguity
    X, l = sol.constraint_points, sol.loss_values
    mult = sol.multiplier_distribution()
    mult_slack = _slack(C, mult)
    oracle = None
    if isinstance(C, NormBall) and C.center.is_probability():
        q = _center_weights(C, X)
        if q is not None:
            oracle = primal_oracle(l, gram(X, C.kernel), q, C.radius, cfg, support=X)

    dist, slack, source = mult, mult_slack, "multipliers"
    if oracle is not None:
        off = abs(mult.expect(l) - oracle.value) > 1e-2
        if off or not (mult_slack >= -1e-6):
            dist = oracle.distribution
            slack = C.radius - mmd(dist.embedding(C.kernel), C.center)
            source = "oracle"
    return Certificate(
        dual_value=sol.objective,
        worst_case_dist=dist,
        gap_estimate=sol.objective - dist.expect(l),
        feasibility_slack=slack,
        oracle_value=oracle.value if oracle is not None else float("nan"),
        source=source,
    )


def _outer(problem: KdroProblem, X: np.ndarray, cfg: SolverConfig, theta0):
    """Normalized Danskin-subgradient descent on theta.

    A step is kept only if it lowers the dual value; the step length grows
    after a success and halves after a failure, so the iterate is always the
    best point seen.
    """
    loss = problem.loss
    theta = np.zeros(loss.n_params) if theta0 is None else np.asarray(theta0, dtype=float).copy()

    def solve_at(th):
        sol = dual_solve(loss.value(th, X), X, problem.ambiguity, cfg)
        sol.theta = th.copy()
        return sol

    best = solve_at(theta)
    history = [(0, best.objective)]
    step = cfg.theta_step
    g = best.active_multipliers @ loss.grad_theta(theta, X)
    for t in range(1, max(cfg.theta_iters, 1)):
        gn = np.linalg.norm(g)
        if gn <= 1e-12 or step <= 1e-9 * (1.0 + np.linalg.norm(best.theta)):
            break
        cand = solve_at(best.theta - step * g / gn)
        history.append((t, cand.objective))
        if cand.objective < best.objective - 1e-12 * (1.0 + abs(best.objective)):
            best = cand
            step *= 1.5
            g = best.active_multipliers @ loss.grad_theta(best.theta, X)
        else:
            step *= 0.5
    return best, history


def solve_kdro(problem: KdroProblem, cfg: SolverConfig | None = None, theta0=None,
               points_per_dim=DEFAULT_GRID, refine=None) -> KdroResult:
    """min over theta, f0, f of f0 + sigma_C(f) s.t. l(theta, xi) <= f0 + f(xi) on the constraint points."""
    cfg = cfg or SolverConfig()
    X = constraint_points(problem, points_per_dim, refine)
    best, history = _outer(problem, X, cfg, theta0)
    cert = _certificate(problem, best, cfg)
    return KdroResult(
        theta=best.theta,
        solution=best,
        certificate=cert,
        converged=best.converged,
        local=not problem.loss.convex,
        history=history,
    )


def relaxed_solve(problem: KdroProblem, cfg: SolverConfig | None = None, theta0=None) -> DualSolution:
    """The same program with constraints imposed at the data points only.

    This relaxation is unsound in general and is kept for comparison.
    """
    cfg = cfg or SolverConfig()
    best, _ = _outer(problem, problem.data, cfg, theta0)
    return best


def ipm_dual_solve(problem: KdroProblem, function_class="rkhs_unit_ball", cfg: SolverConfig | None = None,
                   theta0=None, points_per_dim=DEFAULT_GRID, refine=None) -> DualSolution:
    """IPM-ball dual: min f0 + lambda mean f(xi_i) + lambda eps s.t. l <= f0 + lambda f, |f|_H <= 1.

    With g = lambda f this is the norm-ball program; lambda = |g|_H and
    f = g / lambda are recovered afterwards and stored in ``extras``.
    """
    if function_class != "rkhs_unit_ball":
        raise NotImplementedError(f"unsupported function class {function_class!r}")
    C = problem.ambiguity
    if not isinstance(C, NormBall):
        raise ValueError("IPM duality needs a norm-ball ambiguity set")
    res = solve_kdro(problem, cfg, theta0, points_per_dim, refine)
    sol = res.solution
    g = sol.f
    lam = float(np.sqrt(max(g.coeffs @ gram(g.points, g.kernel) @ g.coeffs, 0.0)))
    f_unit = g * (1.0 / lam) if lam > 0 else g * 0.0
    ipm_obj = sol.f0 + lam * float(C.center.weights @ f_unit(C.center.points)) + lam * C.radius
    sol.extras.update(ipm_lambda=lam, ipm_function=f_unit, ipm_objective=ipm_obj)
    return sol


def certify(theta, problem: KdroProblem, cfg: SolverConfig | None = None,
            points_per_dim=DEFAULT_GRID, refine=None) -> Certificate:
    """Upper bound on the worst-case risk of a fixed theta, with a worst-case distribution."""
    cfg = cfg or SolverConfig()
    X = constraint_points(problem, points_per_dim, refine)
    theta = np.asarray(theta, dtype=float)
    sol = dual_solve(problem.loss.value(theta, X), X, problem.ambiguity, cfg)
    sol.theta = theta
    return _certificate(problem, sol, cfg)


def worst_case_risk(theta, problem: KdroProblem, points_per_dim=DEFAULT_GRID, refine=None,
                    cfg: SolverConfig | None = None) -> float:
    """Primal-oracle worst-case risk on the constraint grid (norm-ball problems)."""
    C = problem.ambiguity
    if not isinstance(C, NormBall):
        raise ValueError("the primal oracle handles norm balls only")
    X = constraint_points(problem, points_per_dim, refine)
    q = _center_weights(C, X)
    return primal_oracle(problem.loss.value(np.asarray(theta, float), X), gram(X, C.kernel), q,
                         C.radius, cfg, support=X).value


def _on_points(mu: Embedding, X: np.ndarray) -> np.ndarray | None:
    q = np.zeros(len(X))
    for pt, w in zip(mu.points, mu.weights):
        hit = np.flatnonzero(np.all(np.abs(X - pt) <= 1e-12, axis=1))
        if len(hit) == 0:
            return None
        q[hit[0]] += w
    return q


def feasible_mixtures(C: AmbiguitySet, X: np.ndarray, n: int, rng: np.random.Generator,
                      max_atoms: int = 5) -> list[DiscreteDistribution]:
    """Random distributions on the rows of X that pass the ambiguity set's membership check.

    Norm ball: the center mixed toward a random sparse distribution R, with
    the mixing weight scaled so the MMD stays inside the radius. Polytope:
    random convex combinations of the vertices.
    """
    X = as_points(X)
    if isinstance(C, NormBall):
        q = _on_points(C.center, X)
        if q is None or not C.center.is_probability():
            raise ValueError("norm-ball center must be a probability embedding supported on X")
        K = gram(X, C.kernel)
    elif isinstance(C, Polytope):
        V = [_on_points(v, X) for v in C.vertices]
        if any(v is None for v in V):
            raise ValueError("polytope vertices must be supported on X")
        V = np.array(V)
    else:
        raise ValueError("feasible mixtures need a norm ball or a polytope")
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 20 * n:
            raise RuntimeError("could not generate feasible mixtures")
        if isinstance(C, NormBall):
            k = int(rng.integers(1, max_atoms + 1))
            r = np.zeros(len(X))
            r[rng.choice(len(X), size=min(k, len(X)), replace=False)] = rng.dirichlet(np.ones(min(k, len(X))))
            d = r - q
            dist = np.sqrt(max(d @ K @ d, 0.0))
            t = 1.0 if dist <= C.radius else C.radius / dist
            p = q + t * rng.uniform(0.5, 1.0) * d
        else:
            p = rng.dirichlet(np.ones(len(V))) @ V
        p = np.maximum(p, 0.0)
        Q = DiscreteDistribution(X, p / p.sum())
        if C.membership(Q.embedding(C.kernel)).inside:
            out.append(Q)
    return out
