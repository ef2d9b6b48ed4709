"""Random Fourier features for the Gaussian kernel.

phi_hat(x)_j = sqrt(2/D) cos(omega_j . x + b_j), omega_j ~ N(0, sigma^-2 I),
b_j ~ U[0, 2 pi), so that E[phi_hat(x) . phi_hat(y)] = k(x, y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec, as_points


@dataclass(frozen=True, eq=False)
class FeatureMap:
    omega: np.ndarray  # (D, d)
    phases: np.ndarray  # (D,)
    kernel: KernelSpec
    seed: int

    @property
    def n_features(self) -> int:
        return len(self.phases)

    @property
    def scale(self) -> float:
        return float(np.sqrt(2.0 / self.n_features))

    def __call__(self, x) -> np.ndarray:
        X = as_points(x, dim=self.omega.shape[1])
        return self.scale * np.cos(X @ self.omega.T + self.phases)

    def function(self, w):
        """The linear model x -> w . phi_hat(x)."""
        w = np.asarray(w, dtype=float)
        return lambda x: self(x) @ w


def sample_features(kernel: KernelSpec, D: int, d: int, seed: int) -> FeatureMap:
    if kernel.family != "gaussian":
        raise NotImplementedError("random Fourier features need a Gaussian kernel")
    if D < 1 or d < 1:
        raise ValueError(f"need D >= 1 and d >= 1, got D={D}, d={d}")
    rng = np.random.default_rng(seed)
    omega = rng.normal(scale=1.0 / kernel.sigma, size=(D, d))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=D)
    return FeatureMap(omega, phases, kernel, int(seed))


def approx_norm(w) -> float:
    """RKHS norm of w . phi_hat, approximated by |w|_2."""
    return float(np.linalg.norm(np.asarray(w, dtype=float)))
