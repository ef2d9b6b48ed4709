"""RKHS ambiguity sets C and their support functions sigma_C(f) = sup_{mu in C} <f, mu>."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _qp
from .kernels import Embedding, KernelMismatchError, KernelSpec, RkhsFunction, inner, mmd, rkhs_norm

MEMBERSHIP_TOL = 1e-6


class Membership(NamedTuple):
    """``inside`` is None when membership cannot be decided for the set."""

    inside: bool | None
    violation: float


class AmbiguitySet:
    kernel: KernelSpec

    def support(self, f: RkhsFunction) -> float:
        raise NotImplementedError

    def membership(self, mu: Embedding) -> Membership:
        raise NotImplementedError

    def embeddings(self) -> list[Embedding]:
        """Every embedding the set is built from."""
        raise NotImplementedError

    def _check(self, kernel: KernelSpec):
        if kernel != self.kernel:
            raise KernelMismatchError(f"kernel mismatch: {kernel} vs {self.kernel}")


@dataclass(frozen=True, eq=False)
class NormBall(AmbiguitySet):
    """{mu : |mu - center|_H <= radius}."""

    center: Embedding
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")

    @property
    def kernel(self) -> KernelSpec:
        return self.center.kernel

    def support(self, f: RkhsFunction) -> float:
        self._check(f.kernel)
        if self.radius == 0:
            return inner(f, self.center)
        return inner(f, self.center) + self.radius * rkhs_norm(f)

    def membership(self, mu: Embedding) -> Membership:
        self._check(mu.kernel)
        v = mmd(mu, self.center) - self.radius
        return Membership(v <= MEMBERSHIP_TOL, v)

    def embeddings(self) -> list[Embedding]:
        return [self.center]


@dataclass(frozen=True, eq=False)
class Polytope(AmbiguitySet):
    """Convex hull of a finite list of embeddings."""

    vertices: tuple[Embedding, ...]

    def __post_init__(self):
        verts = tuple(self.vertices)
        if not verts:
            raise ValueError("polytope needs at least one vertex")
        k = verts[0].kernel
        if any(v.kernel != k for v in verts):
            raise KernelMismatchError("polytope vertices use different kernels")
        object.__setattr__(self, "vertices", verts)

    @property
    def kernel(self) -> KernelSpec:
        return self.vertices[0].kernel

    def support(self, f: RkhsFunction) -> float:
        self._check(f.kernel)
        return max(inner(f, v) for v in self.vertices)

    def vertex_gram(self) -> np.ndarray:
        k = self.kernel
        n = len(self.vertices)
        G = np.empty((n, n))
        for i, a in enumerate(self.vertices):
            for j in range(i, n):
                b = self.vertices[j]
                G[i, j] = G[j, i] = a.weights @ k(a.points, b.points) @ b.weights
        return G

    def membership(self, mu: Embedding) -> Membership:
        """Distance from mu to the hull, via a least-squares fit over the simplex."""
        self._check(mu.kernel)
        k = self.kernel
        G = self.vertex_gram()
        h = np.array([v.weights @ k(v.points, mu.points) @ mu.weights for v in self.vertices])
        c = float(mu.weights @ k(mu.points, mu.points) @ mu.weights)
        lam = _qp.solve(2.0 * G, 2.0 * h)
        resid = float(np.sqrt(max(lam @ G @ lam - 2.0 * lam @ h + c, 0.0)))
        return Membership(resid <= MEMBERSHIP_TOL, resid)

    def embeddings(self) -> list[Embedding]:
        return list(self.vertices)


@dataclass(frozen=True, eq=False)
class MinkowskiSum(AmbiguitySet):
    """{mu_1 + ... + mu_k : mu_i in parts[i]}. Membership is not decided."""

    parts: tuple[AmbiguitySet, ...]

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("Minkowski sum needs at least one part")
        k = parts[0].kernel
        if any(p.kernel != k for p in parts):
            raise KernelMismatchError("Minkowski parts use different kernels")
        object.__setattr__(self, "parts", parts)

    @property
    def kernel(self) -> KernelSpec:
        return self.parts[0].kernel

    def support(self, f: RkhsFunction) -> float:
        self._check(f.kernel)
        return sum(p.support(f) for p in self.parts)

    def membership(self, mu: Embedding) -> Membership:
        self._check(mu.kernel)
        return Membership(None, float("nan"))

    def embeddings(self) -> list[Embedding]:
        return [e for p in self.parts for e in p.embeddings()]


def support(C: AmbiguitySet, f: RkhsFunction) -> float:
    return C.support(f)


def membership(C: AmbiguitySet, mu: Embedding) -> Membership:
    return C.membership(mu)


def minkowski(*parts: AmbiguitySet) -> MinkowskiSum:
    return MinkowskiSum(tuple(parts))


def polytope(vertices: Sequence[Embedding]) -> Polytope:
    return Polytope(tuple(vertices))
