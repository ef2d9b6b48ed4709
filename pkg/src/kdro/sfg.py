"""Stochastic functional gradient DRO.

The dual function is approximated with random Fourier features,
f_hat(xi) = w . phi_hat(xi), and the expectation-constrained program

    min_{theta, f0, w}  f0 + mean_i f_hat(xi_i) + eps |w|_2
    s.t.                E_zeta [l(theta, zeta) - f0 - f_hat(zeta)]_+ <= 0

is solved by cooperative stochastic approximation over the joint variable
x = (theta, f0, w). zeta is drawn from a proposal distribution covering the
domain.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .features import FeatureMap, approx_norm, sample_features
from .kernels import KernelSpec, as_points
from .models import BinaryCrossEntropy, LossSpec, TwoLayerNet
from .solver import DivergenceError, SolverConfig, csa_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProposalSpec:
    """Law of zeta: uniform on a box, or data points plus uniform box noise.

    For data perturbation only the first ``n_perturbed`` columns move (labels
    stay put); ``None`` perturbs every column.
    """

    kind: str = "uniform_box"
    lo: tuple | None = None
    hi: tuple | None = None
    radius: float = 0.0
    batch_size: int = 32
    n_perturbed: int | None = None

    def __post_init__(self):
        if self.kind == "uniform_box":
            if self.lo is None or self.hi is None or np.any(np.asarray(self.lo) >= np.asarray(self.hi)):
                raise ValueError("uniform box proposal needs lo < hi")
        elif self.kind == "data_perturbation":
            if self.radius < 0:
                raise ValueError("perturbation radius must be >= 0")
        else:
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def sample(self, rng: np.random.Generator, data: np.ndarray, size: int | None = None) -> np.ndarray:
        n = size or self.batch_size
        if self.kind == "uniform_box":
            lo = np.broadcast_to(np.asarray(self.lo, float), (data.shape[1],))
            hi = np.broadcast_to(np.asarray(self.hi, float), (data.shape[1],))
            return rng.uniform(lo, hi, size=(n, data.shape[1]))
        zeta = data[rng.integers(len(data), size=n)].copy()
        k = data.shape[1] if self.n_perturbed is None else self.n_perturbed
        zeta[:, :k] += rng.uniform(-self.radius, self.radius, size=(n, k))
        return zeta


@dataclass
class SfgState:
    theta: np.ndarray
    f0: float
    w: np.ndarray
    iteration: int = 0
    seed: int = 0

    def pack(self) -> np.ndarray:
        return np.concatenate([self.theta, [self.f0], self.w])

    @classmethod
    def unpack(cls, x, n_theta, **kw) -> "SfgState":
        return cls(x[:n_theta].copy(), float(x[n_theta]), x[n_theta + 1 :].copy(), **kw)


class Grads(NamedTuple):
    objective: np.ndarray  # d/d(f0, w); theta does not enter the objective
    constraint: np.ndarray  # d/d(theta, f0, w)
    objective_value: float
    constraint_value: float


def objective_value(f0, w, features: FeatureMap, data, eps) -> float:
    return float(f0 + np.mean(features(data) @ w) + eps * approx_norm(w))


def constraint_value(theta, f0, w, loss: LossSpec, features: FeatureMap, zeta) -> float:
    s = loss.value(theta, zeta) - f0 - features(zeta) @ w
    return float(np.mean(np.maximum(s, 0.0)))


def _objective_part(f0, w, data_batch, features: FeatureMap, eps):
    phi_d = features(data_batch)
    nw = approx_norm(w)
    g_w = phi_d.mean(0) + (eps * w / nw if nw > 0 else 0.0)
    return float(f0 + np.mean(phi_d @ w) + eps * nw), np.concatenate([[1.0], g_w])


def _constraint_part(theta, f0, w, zeta_batch, loss: LossSpec, features: FeatureMap, margin=0.0):
    phi_z = features(zeta_batch)
    s = loss.value(theta, zeta_batch) - f0 - phi_z @ w + margin
    act = (s > 0).astype(float)
    n = len(zeta_batch)
    if act.any():
        if hasattr(loss, "mean_grad"):
            idx = act > 0
            g_theta = loss.mean_grad(theta, zeta_batch[idx]) * (idx.sum() / n)
        else:
            g_theta = act @ loss.grad_theta(theta, zeta_batch) / n
    else:
        g_theta = np.zeros(len(theta))
    grad = np.concatenate([g_theta, [-act.mean()], -(act @ phi_z) / n])
    return float(np.mean(np.maximum(s, 0.0))), grad


def functional_grads(theta, f0, w, data_batch, zeta_batch, loss: LossSpec, features: FeatureMap, eps) -> Grads:
    """Minibatch (sub)gradients of the objective and of the positive-part constraint.

    The norm term uses the subgradient 0 at w = 0.
    """
    ov, og = _objective_part(f0, w, data_batch, features, eps)
    cv, cg = _constraint_part(theta, f0, w, zeta_batch, loss, features)
    return Grads(og, cg, ov, cv)


@dataclass
class SfgResult:
    state: SfgState
    features: FeatureMap
    history: list
    objective: float
    constraint_estimate: float
    epsilon: float
    extras: dict = field(default_factory=dict)


def _default_theta(loss: LossSpec, rng):
    if isinstance(loss, BinaryCrossEntropy):
        return loss.model.init(rng)
    return np.zeros(loss.n_params)


def train(loss: LossSpec, data, epsilon: float, proposal: ProposalSpec, n_features: int,
          cfg: SolverConfig | None = None, kernel: KernelSpec | None = None, theta0=None,
          batch_size: int = 32, theta_step_scale: float = 1.0, margin: float = 0.0) -> SfgResult:
    """Run SFG-DRO: sample data and zeta batches, evaluate features, estimate
    functional gradients and take a cooperative SA step, ``cfg.max_iters`` times.

    ``margin`` tightens the constraint during training to
    E[l - f0 - f_hat + margin]_+ <= 0; it raises the objective by at most
    ``margin`` and suppresses the small violations SA leaves behind.
    """
    cfg = cfg or SolverConfig()
    data = as_points(data)
    if len(data) == 0:
        raise ValueError("empty data set")
    kernel = kernel or KernelSpec.gaussian(data=data)
    ss = np.random.SeedSequence(cfg.seed)
    feat_seed, init_seq, loop_seq = ss.spawn(3)
    features = sample_features(kernel, n_features, data.shape[1], int(feat_seed.generate_state(1)[0]))
    theta = _default_theta(loss, np.random.default_rng(init_seq)) if theta0 is None else np.asarray(theta0, float)
    p = len(theta)
    x0 = np.concatenate([theta, [0.0], np.zeros(n_features)])
    b = min(batch_size, len(data))

    def objective(x, rng):
        batch = data[rng.choice(len(data), size=b, replace=False)]
        v, g = _objective_part(x[p], x[p + 1 :], batch, features, epsilon)
        return v, np.concatenate([np.zeros(p), g])

    def constraint(x, rng):
        zeta = proposal.sample(rng, data)
        return _constraint_part(x[:p], x[p], x[p + 1 :], zeta, loss, features, margin)

    scale = np.concatenate([np.full(p, theta_step_scale), np.ones(1 + n_features)])
    try:
        res = csa_solve(objective, constraint, None, x0, cfg, step_scale=scale,
                        rng=np.random.default_rng(loop_seq))
    except DivergenceError as exc:
        exc.last_state = SfgState.unpack(exc.last_state, p, iteration=exc.iteration or 0, seed=cfg.seed)
        raise
    state = SfgState.unpack(res.x, p, iteration=cfg.max_iters, seed=cfg.seed)
    return SfgResult(
        state=state,
        features=features,
        history=res.history,
        objective=objective_value(state.f0, state.w, features, data, epsilon),
        constraint_estimate=res.constraint_estimate,
        epsilon=epsilon,
    )


def fresh_constraint(result: SfgResult, loss: LossSpec, proposal: ProposalSpec, data, n=100_000, seed=12345) -> float:
    """Monte Carlo estimate of the constraint at the trained state on fresh zeta samples."""
    data = as_points(data)
    rng = np.random.default_rng(seed)
    st = result.state
    total, done = 0.0, 0
    while done < n:
        k = min(10_000, n - done)
        zeta = proposal.sample(rng, data, size=k)
        total += constraint_value(st.theta, st.f0, st.w, loss, result.features, zeta) * k
        done += k
    return total / n


def write_log(history, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "objective", "constraint_estimate", "step"])
        wr.writerows(history)


# --- ERM baseline and robustness evaluation ---------------------------------

def train_erm(loss: LossSpec, data, cfg: SolverConfig | None = None, theta0=None, batch_size: int = 32):
    """Minibatch SGD on the empirical risk, step cfg.step_size / t**cfg.step_decay."""
    cfg = cfg or SolverConfig()
    data = as_points(data)
    ss = np.random.SeedSequence(cfg.seed)
    _, init_seq, loop_seq = ss.spawn(3)
    theta = _default_theta(loss, np.random.default_rng(init_seq)) if theta0 is None else np.asarray(theta0, float).copy()
    rng = np.random.default_rng(loop_seq)
    b = min(batch_size, len(data))
    for t in range(1, cfg.max_iters + 1):
        batch = data[rng.choice(len(data), size=b, replace=False)]
        if hasattr(loss, "mean_grad"):
            g = loss.mean_grad(theta, batch)
        else:
            g = loss.grad_theta(theta, batch).mean(0)
        theta = theta - cfg.step_size / t ** cfg.step_decay * g
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"ERM diverged at iteration {t}", iteration=t)
    return theta


def _attack(loss: BinaryCrossEntropy, theta, x, y, delta, kind, rng, steps=20, k=20):
    """Perturbation inside the l_inf box of radius delta maximizing the loss per sample."""
    if delta == 0:
        return x
    xy = lambda xx: np.hstack([xx, y[:, None]])
    if kind == "worst_of_k":
        best, best_l = x, loss.value(theta, xy(x))
        for _ in range(k):
            cand = x + rng.uniform(-delta, delta, size=x.shape)
            lc = loss.value(theta, xy(cand))
            upd = lc > best_l
            best = np.where(upd[:, None], cand, best)
            best_l = np.where(upd, lc, best_l)
        return best
    if kind != "pgd":
        raise ValueError(f"unknown attack {kind!r}")
    step = delta / 8.0
    d = rng.uniform(-delta, delta, size=x.shape)
    best, best_l = x, loss.value(theta, xy(x))
    for _ in range(steps):
        g = loss.grad_input(theta, xy(x + d))
        d = np.clip(d + step * np.sign(g), -delta, delta)
        lc = loss.value(theta, xy(x + d))
        upd = lc > best_l
        best = np.where(upd[:, None], x + d, best)
        best_l = np.where(upd, lc, best_l)
    return best


def error_rate(loss: BinaryCrossEntropy, theta, x, y) -> float:
    pred = loss.model.logits(theta, x) > 0
    return float(np.mean(pred != (y > 0.5)))


def evaluate_robustness(theta, loss: BinaryCrossEntropy, x_test, y_test, deltas, attack="pgd", seed=0):
    """Error rate under l_inf-bounded attacks for each radius in ``deltas``."""
    x_test = np.asarray(x_test, float)
    y_test = np.asarray(y_test, float)
    rng = np.random.default_rng(seed)
    out = []
    for delta in deltas:
        if delta < 0:
            raise ValueError("perturbation radius must be >= 0")
        xa = _attack(loss, theta, x_test, y_test, float(delta), attack, rng)
        out.append((float(delta), error_rate(loss, theta, xa, y_test)))
    return out


def make_two_blobs(n, rng, d_weak=4, weak_shift=0.3, weak_std=0.3, strong_shift=1.5, strong_std=1.0):
    """Synthetic two-class task: one well-separated but noisy feature plus
    several low-margin features that are jointly very predictive.

    Returns (x, y) with x of shape (n, 1 + d_weak) and y in {0, 1}.
    """
    y = rng.integers(0, 2, size=n).astype(float)
    s = 2.0 * y - 1.0
    strong = s * strong_shift + strong_std * rng.normal(size=n)
    weak = s[:, None] * weak_shift + weak_std * rng.normal(size=(n, d_weak))
    return np.column_stack([strong, weak]), y


def classification_loss(d_in, hidden=16) -> BinaryCrossEntropy:
    return BinaryCrossEntropy(TwoLayerNet(d_in, hidden))
