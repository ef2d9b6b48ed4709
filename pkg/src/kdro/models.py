"""Losses l(theta, xi) shared by the batch and stochastic solvers.

Every loss is vectorized over rows of ``xi`` (shape ``(n, d)``) and returns
values of shape ``(n,)`` and theta-subgradients of shape ``(n, p)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import as_points


class LossSpec:
    n_params: int

    def value(self, theta, xi) -> np.ndarray:
        raise NotImplementedError

    def grad_theta(self, theta, xi) -> np.ndarray:
        raise NotImplementedError

    convex = True

    def __call__(self, theta, xi):
        return self.value(theta, xi)


def eval_loss(spec: LossSpec, theta, xi) -> np.ndarray:
    return spec.value(np.asarray(theta, dtype=float), as_points(xi))


def grad_theta(spec: LossSpec, theta, xi) -> np.ndarray:
    return spec.grad_theta(np.asarray(theta, dtype=float), as_points(xi))


@dataclass(frozen=True)
class HingeShift(LossSpec):
    """l(theta, xi) = [|theta + xi| - 1]_+ (Euclidean norm for d > 1)."""

    dim: int = 1

    @property
    def n_params(self):
        return self.dim

    def value(self, theta, xi):
        r = np.linalg.norm(as_points(xi) + np.reshape(theta, (1, -1)), axis=1)
        return np.maximum(r - 1.0, 0.0)

    def grad_theta(self, theta, xi):
        u = as_points(xi) + np.reshape(theta, (1, -1))
        r = np.linalg.norm(u, axis=1)
        # subgradient 0 at the kink |u| = 1
        active = r > 1.0
        g = np.zeros_like(u)
        g[active] = u[active] / r[active, None]
        return g


@dataclass(frozen=True, eq=False)
class UncertainLeastSquares(LossSpec):
    """l(theta, xi) = |A(xi) theta - b(xi)|^2 with A, b affine in xi.

    ``A`` has shape ``(1 + d, m, p)``: A(xi) = A[0] + sum_k xi_k A[k + 1];
    ``b`` has shape ``(1 + d, m)`` likewise.
    """

    A: np.ndarray
    b: np.ndarray

    @property
    def n_params(self):
        return self.A.shape[2]

    def _residual(self, theta, xi):
        X = as_points(xi, dim=self.A.shape[0] - 1)
        Z = np.hstack([np.ones((len(X), 1)), X])
        Ax = np.einsum("nk,kmp->nmp", Z, self.A)
        bx = Z @ self.b
        return Ax, np.einsum("nmp,p->nm", Ax, theta) - bx

    def value(self, theta, xi):
        _, r = self._residual(theta, xi)
        return (r * r).sum(1)

    def grad_theta(self, theta, xi):
        Ax, r = self._residual(theta, xi)
        return 2.0 * np.einsum("nmp,nm->np", Ax, r)

    def erm(self, xi) -> np.ndarray:
        """Closed-form minimizer of the average loss over the rows of xi."""
        Ax, _ = self._residual(np.zeros(self.n_params), xi)
        X = as_points(xi, dim=self.A.shape[0] - 1)
        bx = np.hstack([np.ones((len(X), 1)), X]) @ self.b
        M = np.einsum("nmp,nmq->pq", Ax, Ax)
        v = np.einsum("nmp,nm->p", Ax, bx)
        return np.linalg.solve(M, v)

    @classmethod
    def random(cls, m: int, p: int, d: int, rng: np.random.Generator, noise: float = 0.3):
        """A seeded synthetic instance: nominal system plus noise directions."""
        A = np.empty((1 + d, m, p))
        A[0] = rng.normal(size=(m, p))
        A[1:] = noise * rng.normal(size=(d, m, p))
        b = np.empty((1 + d, m))
        b[0] = rng.normal(size=m)
        b[1:] = noise * rng.normal(size=(d, m))
        return cls(A, b)


class TwoLayerNet:
    """logit(x) = w2 . tanh(W1 x + b1) + b2, parameters packed flat."""

    def __init__(self, d_in: int, hidden: int = 16):
        self.d_in = d_in
        self.hidden = hidden
        self.n_params = hidden * d_in + 2 * hidden + 1

    def unpack(self, theta):
        h, d = self.hidden, self.d_in
        W1 = theta[: h * d].reshape(h, d)
        b1 = theta[h * d : h * d + h]
        w2 = theta[h * d + h : h * d + 2 * h]
        b2 = theta[-1]
        return W1, b1, w2, b2

    def init(self, rng: np.random.Generator) -> np.ndarray:
        h, d = self.hidden, self.d_in
        return np.concatenate([
            rng.normal(scale=1.0 / np.sqrt(d), size=h * d),
            np.zeros(h),
            rng.normal(scale=1.0 / np.sqrt(h), size=h),
            [0.0],
        ])

    def forward(self, theta, x):
        W1, b1, w2, b2 = self.unpack(theta)
        a = np.tanh(x @ W1.T + b1)
        return a @ w2 + b2, a

    def logits(self, theta, x):
        return self.forward(theta, x)[0]


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class BinaryCrossEntropy(LossSpec):
    """Logistic loss of a two-layer net; xi rows are (x_1..x_d, y) with y in {0, 1}."""

    convex = False

    def __init__(self, model: TwoLayerNet):
        self.model = model
        self.n_params = model.n_params

    def split(self, xi):
        xi = as_points(xi, dim=self.model.d_in + 1)
        return xi[:, :-1], xi[:, -1]

    def value(self, theta, xi):
        x, y = self.split(xi)
        z = self.model.logits(theta, x)
        return _softplus(z) - y * z

    def _backprop(self, theta, x, y):
        W1, b1, w2, b2 = self.model.unpack(theta)
        z, a = self.model.forward(theta, x)
        dz = _sigmoid(z) - y
        da = dz[:, None] * w2[None, :] * (1.0 - a * a)
        return dz, a, da, W1

    def grad_theta(self, theta, xi):
        x, y = self.split(xi)
        dz, a, da, _ = self._backprop(theta, x, y)
        n = len(x)
        gW1 = (da[:, :, None] * x[:, None, :]).reshape(n, -1)
        return np.hstack([gW1, da, dz[:, None] * a, dz[:, None]])

    def grad_input(self, theta, xi):
        """d loss / d x for each row (labels held fixed)."""
        x, y = self.split(xi)
        _, _, da, W1 = self._backprop(theta, x, y)
        return da @ W1

    def mean_grad(self, theta, xi):
        """Full-batch average gradient without materializing per-sample rows."""
        x, y = self.split(xi)
        dz, a, da, _ = self._backprop(theta, x, y)
        n = len(x)
        return np.concatenate([(da.T @ x).ravel(), da.sum(0), a.T @ dz, [dz.sum()]]) / n


@dataclass(frozen=True, eq=False)
class Custom(LossSpec):
    """User-supplied loss and theta-subgradient, both vectorized over rows of xi."""

    fn: Callable
    grad: Callable
    n_params: int = 1
    convex: bool = True

    def value(self, theta, xi):
        xi = as_points(xi)
        v = np.asarray(self.fn(theta, xi), dtype=float).reshape(-1)
        bad = ~np.isfinite(v)
        if bad.any():
            raise ValueError(f"loss is not finite at xi={xi[np.argmax(bad)].tolist()}")
        return v

    def grad_theta(self, theta, xi):
        xi = as_points(xi)
        return np.asarray(self.grad(theta, xi), dtype=float).reshape(len(xi), -1)
