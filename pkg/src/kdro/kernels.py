"""Kernels, Gram matrices, RKHS function expansions and kernel mean embeddings.

Points are stored as 2-D float arrays of shape ``(n, d)``. Scalars and 1-D
arrays are promoted, so ``as_points([0.0, 2.0])`` gives two points in R^1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAM_JITTER = 1e-10


class KernelMismatchError(ValueError):
    """Two objects that must share a kernel were built with different ones."""


def as_points(x, dim: int | None = None) -> np.ndarray:
    """Promote ``x`` to an ``(n, d)`` float array.

    A 1-D input is read as n scalar points unless ``dim`` says otherwise.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if dim is not None and dim > 1:
            arr = arr.reshape(1, -1)
        else:
            arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"points must be at most 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain non-finite coordinates")
    return arr


def _one_point(x) -> np.ndarray:
    """A single location: scalars and 1-D vectors become one row."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim <= 1:
        arr = arr.reshape(1, -1)
    if arr.shape[0] != 1:
        raise ValueError(f"expected a single point, got shape {arr.shape}")
    return as_points(arr)


def median_bandwidth(points) -> float:
    """Median heuristic: the median pairwise distance of distinct points."""
    X = as_points(points)
    if len(X) < 2:
        return 1.0
    d2 = _sqdist(X, X)
    iu = np.triu_indices(len(X), 1)
    dist = np.sqrt(d2[iu])
    dist = dist[dist > 0]
    if dist.size == 0:
        return 1.0
    return float(np.median(dist))


def _sqdist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    d2 = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(d2, 0.0)


@dataclass(frozen=True)
class KernelSpec:
    """A positive definite kernel.

    ``family`` is ``"gaussian"`` (k(x,y) = exp(-|x-y|^2 / 2 sigma^2)) or
    ``"polynomial"`` (k(x,y) = (x.y + offset)^degree).
    """

    family: str = "gaussian"
    sigma: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.family not in ("gaussian", "polynomial"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "gaussian" and not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"bandwidth must be positive, got {self.sigma}")
        if self.family == "polynomial" and (self.degree < 1 or self.offset < 0):
            raise ValueError("polynomial kernel needs degree >= 1 and offset >= 0")

    @classmethod
    def gaussian(cls, sigma: float | None = None, data=None) -> "KernelSpec":
        """Gaussian kernel; falls back to the median heuristic on ``data``."""
        if sigma is None:
            if data is None:
                raise ValueError("need either sigma or data for the median heuristic")
            sigma = median_bandwidth(data)
        return cls("gaussian", float(sigma))

    def __call__(self, X, Y) -> np.ndarray:
        X = as_points(X)
        Y = as_points(Y, dim=X.shape[1])
        if X.shape[1] != Y.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        if self.family == "gaussian":
            return np.exp(-_sqdist(X, Y) / (2.0 * self.sigma ** 2))
        return (X @ Y.T + self.offset) ** self.degree


def gram(points, kernel: KernelSpec) -> np.ndarray:
    """K[i, j] = k(x_i, x_j), symmetrized."""
    X = as_points(points)
    if len(X) == 0:
        raise ValueError("gram needs at least one point")
    K = kernel(X, X)
    K = 0.5 * (K + K.T)
    if kernel.family == "gaussian":
        np.fill_diagonal(K, 1.0)
    return K


def jittered(K: np.ndarray) -> np.ndarray:
    return K + GRAM_JITTER * np.eye(len(K))


def _check_same(a: KernelSpec, b: KernelSpec):
    if a != b:
        raise KernelMismatchError(f"kernel mismatch: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class RkhsFunction:
    """f = sum_j coeffs[j] * k(points[j], .)."""

    points: np.ndarray
    coeffs: np.ndarray
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        pts = as_points(self.points)
        a = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if len(pts) != len(a):
            raise ValueError(f"{len(pts)} points but {len(a)} coefficients")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "coeffs", a)

    @classmethod
    def feature(cls, x, kernel: KernelSpec) -> "RkhsFunction":
        """The canonical feature k(x, .)."""
        return cls(_one_point(x), np.ones(1), kernel)

    @classmethod
    def zero(cls, kernel: KernelSpec, dim: int = 1) -> "RkhsFunction":
        return cls(np.zeros((1, dim)), np.zeros(1), kernel)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __call__(self, x) -> np.ndarray:
        X = as_points(x, dim=self.dim)
        return self.kernel(X, self.points) @ self.coeffs

    def __add__(self, other: "RkhsFunction") -> "RkhsFunction":
        _check_same(self.kernel, other.kernel)
        return RkhsFunction(
            np.vstack([self.points, other.points]),
            np.concatenate([self.coeffs, other.coeffs]),
            self.kernel,
        )

    def __mul__(self, c: float) -> "RkhsFunction":
        return RkhsFunction(self.points, float(c) * self.coeffs, self.kernel)

    __rmul__ = __mul__

    def __neg__(self) -> "RkhsFunction":
        return self * -1.0

    def __sub__(self, other: "RkhsFunction") -> "RkhsFunction":
        return self + (-other)


@dataclass(frozen=True, eq=False)
class Embedding:
    """A (possibly signed) mixture embedding mu = sum_i w_i k(x_i, .)."""

    points: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        pts = as_points(self.points)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(pts) != len(w):
            raise ValueError(f"{len(pts)} points but {len(w)} weights")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empirical(cls, points, kernel: KernelSpec) -> "Embedding":
        pts = as_points(points)
        return cls(pts, np.full(len(pts), 1.0 / len(pts)), kernel)

    @classmethod
    def dirac(cls, x, kernel: KernelSpec) -> "Embedding":
        return cls(_one_point(x), np.ones(1), kernel)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_probability(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.weights >= -tol) and abs(self.weights.sum() - 1.0) <= tol)

    def as_function(self) -> RkhsFunction:
        return RkhsFunction(self.points, self.weights, self.kernel)

    def __add__(self, other: "Embedding") -> "Embedding":
        _check_same(self.kernel, other.kernel)
        return Embedding(
            np.vstack([self.points, other.points]),
            np.concatenate([self.weights, other.weights]),
            self.kernel,
        )

    def __mul__(self, c: float) -> "Embedding":
        return Embedding(self.points, float(c) * self.weights, self.kernel)

    __rmul__ = __mul__

    def __sub__(self, other: "Embedding") -> "Embedding":
        return self + other * -1.0


def inner(f: RkhsFunction, mu: Embedding) -> float:
    """<f, mu>_H = sum_i w_i f(x_i)."""
    _check_same(f.kernel, mu.kernel)
    return float(mu.weights @ f(mu.points))


def rkhs_norm(f: RkhsFunction) -> float:
    K = gram(f.points, f.kernel)
    sq = float(f.coeffs @ K @ f.coeffs)
    # cancellation noise scales with the magnitude of the terms, not with sq
    scale = float(np.abs(f.coeffs) @ np.abs(K) @ np.abs(f.coeffs))
    return float(np.sqrt(sq)) if sq > 1e-14 * scale else 0.0


def mmd(p: Embedding, q: Embedding) -> float:
    """|mu_p - mu_q|_H from the plug-in double sums, clamped at zero."""
    _check_same(p.kernel, q.kernel)
    k = p.kernel
    sq = (
        p.weights @ gram(p.points, k) @ p.weights
        + q.weights @ gram(q.points, k) @ q.weights
        - 2.0 * p.weights @ k(p.points, q.points) @ q.weights
    )
    return float(np.sqrt(max(sq, 0.0)))
