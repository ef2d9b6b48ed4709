"""Optimization engines.

* ``primal_oracle``: worst-case distribution over a finite support inside an
  MMD ball (bisection on the ball constraint's multiplier).
* ``dual_solve``: the discretized dual program, minimizing
  f0 + sigma_C(f) subject to l(xi_j) <= f0 + f(xi_j) on the constraint points.
* ``csa_solve``: cooperative stochastic approximation for problems with one
  expectation constraint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import linprog, minimize, nnls
from scipy.special import logsumexp, softmax

from . import _qp
from .ambiguity import AmbiguitySet, MinkowskiSum, NormBall, Polytope
from .kernels import Embedding, KernelSpec, RkhsFunction, as_points, gram

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A solver could not produce a usable answer."""


class DivergenceError(SolverError):
    def __init__(self, msg, last_state=None, iteration=None):
        super().__init__(msg)
        self.last_state = last_state
        self.iteration = iteration


@dataclass
class SolverConfig:
    max_iters: int = 5000
    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    # stochastic approximation
    step_size: float = 0.1
    step_decay: float = 0.5  # gamma_t = step_size / t**step_decay
    tol0: float = 0.1  # constraint tolerance eta_t = max(tol0 / sqrt(t), tol_min)
    tol_min: float = 0.0
    constraint_step_scale: float = 1.0  # relative step on constraint iterations
    avg_start: float = 0.5
    seed: int = 0
    # outer theta loop of the batch solver
    theta_iters: int = 60
    theta_step: float = 0.5

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        pts = as_points(self.support)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if len(p) != len(pts):
            raise ValueError("support and probs differ in length")
        if p.min(initial=0.0) < -1e-9 or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability vector (min {p.min()}, sum {p.sum()})")
        p = np.maximum(p, 0.0)
        object.__setattr__(self, "support", pts)
        object.__setattr__(self, "probs", p / p.sum())

    def expect(self, values) -> float:
        return float(self.probs @ np.asarray(values, dtype=float))

    def embedding(self, kernel: KernelSpec) -> Embedding:
        return Embedding(self.support, self.probs, kernel)


class OracleResult(NamedTuple):
    distribution: DiscreteDistribution
    value: float
    multiplier: float  # Lagrange multiplier of the MMD constraint
    bound: float  # Lagrangian upper bound on the optimal value


def _normalize_probs(p):
    p = np.maximum(p, 0.0)
    return p / p.sum()


def primal_oracle(loss_values, K, q, eps, cfg: SolverConfig | None = None, support=None) -> OracleResult:
    """Maximize p.l over the simplex subject to (p - q)'K(p - q) <= eps^2.

    The multiplier of the quadratic constraint is found by bisection; each
    Lagrangian subproblem is a concave QP on the simplex, warm-started by
    entropic mirror ascent from a q/uniform blend and finished exactly by an
    active-set method. Among tied maximizers the blend start favours the
    spread-out one.
    """
    cfg = cfg or SolverConfig()
    l = np.asarray(loss_values, dtype=float).reshape(-1)
    K = np.asarray(K, dtype=float)
    q = np.asarray(q, dtype=float).reshape(-1)
    m = len(l)
    if m < 1:
        raise ValueError("empty support")
    if K.shape != (m, m) or len(q) != m:
        raise ValueError(f"shape mismatch: l {l.shape}, K {K.shape}, q {q.shape}")
    if not np.all(np.isfinite(l)):
        raise ValueError("non-finite loss values")
    if not eps >= 0:
        raise ValueError(f"radius must be nonnegative, got {eps}")
    if q.min() < -1e-12 or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("q must be a probability vector")
    K = 0.5 * (K + K.T)
    pts = np.arange(m, dtype=float)[:, None] if support is None else as_points(support)
    eps2 = eps * eps

    def cons(p):
        d = p - q
        return float(d @ K @ d)

    def lagrangian_argmax(lam, x0, warm):
        return _qp.solve(2.0 * lam * K, l + 2.0 * lam * (K @ q), x0, warm_iters=warm)

    p0 = 0.5 * q + 0.5 / m
    if eps == 0 or m == 1:
        return OracleResult(DiscreteDistribution(pts, q), float(q @ l), 0.0, float(q @ l))

    top = l >= l.max() - 1e-12
    p_top = _normalize_probs(p0 * top)
    if cons(p_top) <= eps2:
        v = float(p_top @ l)
        return OracleResult(DiscreteDistribution(pts, p_top), v, 0.0, v)

    lo, p_lo = 0.0, p_top
    hi = 1.0
    p_hi = lagrangian_argmax(hi, p0, 200)
    while cons(p_hi) > eps2:
        lo, p_lo = hi, p_hi
        hi *= 4.0
        if hi > 1e16:
            raise SolverError(
                f"bisection failed to bracket: eps={eps}, cons={cons(p_hi):.3e}, "
                f"lambda={hi:.3e}"
            )
        p_hi = lagrangian_argmax(hi, p_hi, 0)

    for _ in range(200):
        if hi - lo <= 1e-13 * hi:
            break
        mid = 0.5 * (lo + hi)
        p_mid = lagrangian_argmax(mid, p_hi, 0)
        if cons(p_mid) <= eps2:
            hi, p_hi = mid, p_mid
        else:
            lo, p_lo = mid, p_mid

    # The Lagrangian argmax may jump across a face at the optimal multiplier;
    # slide from the feasible end toward the infeasible one up to the boundary.
    p = p_hi
    e = p_lo - p_hi
    a = float(e @ K @ e)
    if a > 0:
        d = p_hi - q
        b = float(d @ K @ e)
        c0 = cons(p_hi) - eps2
        disc = b * b - a * c0
        t = (-b + np.sqrt(max(disc, 0.0))) / a
        t = min(max(t, 0.0), 1.0)
        cand = _normalize_probs(p_hi + t * e)
        if cons(cand) <= eps2 * (1 + 1e-12) + 1e-15 and cand @ l > p @ l:
            p = cand

    H = 2.0 * hi * K
    g = l + 2.0 * hi * (K @ q)
    bound = float(p_hi @ l - hi * (cons(p_hi) - eps2) + max(_qp.fw_gap(H, g, p_hi), 0.0))
    value = float(p @ l)
    return OracleResult(DiscreteDistribution(pts, p), value, hi, max(bound, value))


@dataclass
class DualSolution:
    theta: np.ndarray | None
    f0: float
    f: RkhsFunction
    objective: float
    active_multipliers: np.ndarray
    constraint_points: np.ndarray
    loss_values: np.ndarray
    converged: bool = True
    gap_estimate: float = float("nan")
    extras: dict = field(default_factory=dict)

    @property
    def majorant(self) -> np.ndarray:
        """f0 + f evaluated on the constraint points."""
        return self.f0 + self.f(self.constraint_points)

    @property
    def max_violation(self) -> float:
        return float(np.max(self.loss_values - self.majorant))

    def multiplier_distribution(self) -> DiscreteDistribution:
        return DiscreteDistribution(self.constraint_points, _normalize_probs(self.active_multipliers))


# --- dual solve -------------------------------------------------------------
#
# f is expanded on the constraint points, f = sum_j alpha_j k(xi_j, .). With
# K = V diag(w) V' we write alpha = V_r z / sqrt(w_r) over the numerically
# nonzero spectrum, so that f(xi) = G z with G = V_r diag(sqrt(w_r)) and
# |f|_H = |z|_2. The support function becomes a tree of linear functionals
# in z and the program is
#     min_z  max_j (l_j - (G z)_j) + sigma(z),
# solved by log-sum-exp / smoothed-norm continuation with L-BFGS.

_EIG_CUTOFF = 1e-13


class _Ball(NamedTuple):
    a: np.ndarray
    radius: float


class _Hull(NamedTuple):
    A: np.ndarray


class _Sum(NamedTuple):
    parts: list


def _linear_form(emb: Embedding, X, kernel, basis, G):
    """z -> <f, emb> for f = sum_j (basis z)_j k(xi_j, .).

    When the embedding sits on the constraint points this is exactly G'q,
    which keeps cancellations such as <1, emb> = 1 free of eigen roundoff.
    """
    q = np.zeros(len(X))
    for pt, wt in zip(emb.points, emb.weights):
        hit = np.flatnonzero(np.all(np.abs(X - pt) <= 1e-12, axis=1))
        if len(hit) == 0:
            return basis.T @ (kernel(X, emb.points) @ emb.weights)
        q[hit[0]] += wt
    return G.T @ q


def _compile(C: AmbiguitySet, X, kernel, basis, G):
    if isinstance(C, NormBall):
        return _Ball(_linear_form(C.center, X, kernel, basis, G), float(C.radius))
    if isinstance(C, Polytope):
        return _Hull(np.array([_linear_form(v, X, kernel, basis, G) for v in C.vertices]))
    if isinstance(C, MinkowskiSum):
        return _Sum([_compile(p, X, kernel, basis, G) for p in C.parts])
    raise TypeError(f"unsupported ambiguity set {type(C).__name__}")


def _sigma(node, z, tau, delta):
    """Smoothed support value and gradient; tau = delta = 0 gives the exact value."""
    if isinstance(node, _Ball):
        if node.radius == 0:
            return node.a @ z, node.a.copy()
        nz = np.sqrt(z @ z + delta * delta)
        grad = node.a + node.radius * (z / nz if nz > 0 else 0.0 * z)
        return node.a @ z + node.radius * (nz - delta), grad
    if isinstance(node, _Hull):
        s = node.A @ z
        if tau > 0 and len(s) > 1:
            w = softmax(s / tau)
            return tau * logsumexp(s / tau), node.A.T @ w
        j = int(np.argmax(s))
        return s[j], node.A[j].copy()
    val, grad = 0.0, np.zeros_like(z)
    for part in node.parts:
        v, g = _sigma(part, z, tau, delta)
        val += v
        grad += g
    return val, grad


def _smooth_objective(z, l, G, node, tau):
    s = l - G @ z
    lse = tau * logsumexp(s / tau)
    p = softmax(s / tau)
    sv, sg = _sigma(node, z, tau, tau)
    return lse + sv, sg - G.T @ p


def _refine_multipliers(G, target, slack, p_soft, tol):
    """Least-squares fit of G'p = target over the (near-)active constraints."""
    act = np.flatnonzero(slack <= tol)
    if len(act) == 0:
        return p_soft
    w = 1e3
    A = np.vstack([G[act].T, w * np.ones((1, len(act)))])
    b = np.concatenate([target, [w]])
    pa, _ = nnls(A, b, maxiter=50 * len(act))
    if pa.sum() <= 0:
        return p_soft
    p = np.zeros(len(slack))
    p[act] = pa / pa.sum()
    if np.linalg.norm(G.T @ p - target) <= np.linalg.norm(G.T @ p_soft - target):
        return p
    return p_soft


def dual_solve(loss, constraint_points, C: AmbiguitySet, cfg: SolverConfig | None = None) -> DualSolution:
    """Solve min f0 + sigma_C(f) s.t. loss(xi_j) <= f0 + f(xi_j) for all constraint points.

    ``loss`` is either a callable evaluated on the points or the vector of
    loss values. The returned f0 makes every constraint hold exactly, so the
    objective is always a valid upper bound for the discretized problem.
    """
    cfg = cfg or SolverConfig()
    kernel = C.kernel
    X = as_points(constraint_points)
    l = np.asarray(loss(X) if callable(loss) else loss, dtype=float).reshape(-1)
    if len(l) != len(X):
        raise ValueError(f"{len(l)} loss values for {len(X)} constraint points")
    if not np.all(np.isfinite(l)):
        raise ValueError("non-finite loss values on constraint points")

    K = gram(X, kernel)
    w, V = np.linalg.eigh(K)
    keep = w > _EIG_CUTOFF * max(w.max(), 1e-300)
    Vr, wr = V[:, keep], w[keep]
    G = Vr * np.sqrt(wr)
    basis = Vr / np.sqrt(wr)  # z -> alpha
    node = _compile(C, X, kernel, basis, G)

    scale = max(1.0, float(np.ptp(l)))
    z = np.zeros(G.shape[1])
    taus = scale * np.logspace(-1, -8, 8)
    converged = True
    maxiter = max(200, cfg.max_iters)
    flat_ball = isinstance(node, _Ball) and node.radius == 0
    for tau in taus[:1] if flat_ball else taus:
        res = minimize(
            _smooth_objective, z, args=(l, G, node, tau), jac=True, method="L-BFGS-B",
            options=dict(maxiter=maxiter, ftol=1e-15, gtol=1e-12 * scale, maxcor=30),
        )
        if res.status == 1:
            converged = False
        if np.all(np.isfinite(res.x)):
            z = res.x

    # exact objective at the final iterate; pick f0 to make it feasible
    F = G @ z
    f0 = float(np.max(l - F))
    sig, _ = _sigma(node, z, 0.0, 0.0)
    objective = f0 + float(sig)

    # zero function is sometimes better once smoothing is gone (tiny norms)
    f0_zero = float(np.max(l))
    obj_zero = f0_zero + float(_sigma(node, np.zeros_like(z), 0.0, 0.0)[0])
    if obj_zero < objective:
        z, F, f0, objective = np.zeros_like(z), np.zeros_like(F), f0_zero, obj_zero

    # Without a norm penalty the optimum interpolates l, which the smoothed
    # path only approaches with exploding coefficients. The program is then
    # the LP  min t + a.z  s.t.  l - G z <= t.
    p_lp = None
    if flat_ball:
        n = G.shape[1]
        lp = linprog(np.concatenate([[1.0], node.a]), A_ub=np.hstack([-np.ones((len(l), 1)), -G]),
                     b_ub=-l, bounds=[(None, None)] * (n + 1), method="highs")
        if lp.status == 0:
            zi = lp.x[1:]
            Fi = G @ zi
            f0_i = float(np.max(l - Fi))
            obj_i = f0_i + float(node.a @ zi)
            if obj_i < objective:
                z, F, f0, objective = zi, Fi, f0_i, obj_i
                p_lp = _normalize_probs(-lp.ineqlin.marginals)

    tau = taus[-1]
    p = softmax((l - F - f0) / tau)
    slack = f0 + F - l
    _, target = _sigma(node, z, tau, tau)
    if p_lp is not None:
        p = p_lp
    elif np.linalg.norm(z) > 0:
        p = _refine_multipliers(G, target, slack, p, tol=1e-6 * scale)

    f = RkhsFunction(X, basis @ z, kernel)
    # f0 against the evaluated expansion, which can drift from G z by eigen roundoff
    f0_eval = float(np.max(l - f(X)))
    objective += f0_eval - f0
    f0 = f0_eval
    return DualSolution(
        theta=None,
        f0=f0,
        f=f,
        objective=objective,
        active_multipliers=p,
        constraint_points=X,
        loss_values=l,
        converged=converged,
        gap_estimate=float(objective - p @ l),
    )


# --- cooperative stochastic approximation ----------------------------------

Oracle = Callable[[np.ndarray, np.random.Generator], "tuple[float, np.ndarray]"]


@dataclass
class CsaResult:
    x: np.ndarray
    constraint_estimate: float
    objective_estimate: float
    history: list
    n_objective_steps: int
    last: np.ndarray


def csa_solve(
    objective: Oracle,
    constraint: Oracle,
    projection: Callable[[np.ndarray], np.ndarray] | None,
    x0,
    cfg: SolverConfig | None = None,
    step_scale=None,
    rng: np.random.Generator | None = None,
) -> CsaResult:
    """Cooperative SA: step on the constraint while its estimate exceeds eta_t,
    otherwise on the objective; return the step-weighted average of the
    objective-step iterates from the second half of the run.

    Oracles take ``(x, rng)`` and return ``(value, gradient)`` estimates.
    """
    cfg = cfg or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    proj = projection or (lambda v: v)
    x = proj(np.asarray(x0, dtype=float).copy())
    scale = 1.0 if step_scale is None else np.asarray(step_scale, dtype=float)
    T = cfg.max_iters
    start = int(cfg.avg_start * T)
    acc, wsum = np.zeros_like(x), 0.0
    c_acc, o_acc, c_n = 0.0, 0.0, 0
    history = []
    n_obj = 0
    for t in range(1, T + 1):
        try:
            cval, cgrad = constraint(x, rng)
            oval, ograd = objective(x, rng)
        except Exception as exc:
            raise SolverError(f"oracle failed at iteration {t}: {exc}") from exc
        gamma = cfg.step_size / t ** cfg.step_decay
        eta = max(cfg.tol0 / np.sqrt(t), cfg.tol_min)
        if cval <= eta:
            kind = "objective"
            if t > start:
                acc += gamma * x
                wsum += gamma
                n_obj += 1
            x_new = proj(x - gamma * scale * ograd)
        else:
            kind = "constraint"
            x_new = proj(x - cfg.constraint_step_scale * gamma * scale * cgrad)
        if t > start:
            c_acc += cval
            o_acc += oval
            c_n += 1
        history.append((t, float(oval), float(cval), kind))
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"non-finite iterate at iteration {t}", last_state=x, iteration=t)
        x = x_new
    x_avg = acc / wsum if wsum > 0 else x
    return CsaResult(
        x=x_avg,
        constraint_estimate=c_acc / max(c_n, 1),
        objective_estimate=o_acc / max(c_n, 1),
        history=history,
        n_objective_steps=n_obj,
        last=x,
    )
