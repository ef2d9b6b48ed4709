"""Concave quadratic maximization over the probability simplex.

    maximize  g.x - 0.5 x'Hx   s.t.  x >= 0, sum(x) = 1

with H symmetric PSD, possibly singular. Small dense problems only (a few
hundred variables at most). Two solvers are provided: entropic mirror ascent,
which is cheap and keeps every coordinate positive, and a primal active-set
method that finishes the job exactly.
"""

from __future__ import annotations

import numpy as np


def mirror_ascent(H, g, x0, iters=200, tol=1e-12):
    """Entropic mirror ascent with step 1/L, L the l1-smoothness constant."""
    x = np.asarray(x0, dtype=float).copy()
    L = np.abs(H).max() if H.size else 0.0
    step = 1.0 / L if L > 0 else 1.0
    for _ in range(iters):
        grad = g - H @ x
        if grad.max() - x @ grad <= tol:
            break
        z = np.log(np.maximum(x, 1e-300)) + step * grad
        z -= z.max()
        x = np.exp(z)
        x /= x.sum()
    return x


def fw_gap(H, g, x):
    """Frank-Wolfe gap; an upper bound on optimum minus objective at x."""
    grad = g - H @ x
    return float(grad.max() - x @ grad)


def _complement_basis(k):
    # orthonormal basis of {d in R^k : sum(d) = 0}
    Q, _ = np.linalg.qr(np.eye(k) - 1.0 / k)
    return Q[:, : k - 1]


def active_set(H, g, x0=None, tol=1e-12, max_iter=1000):
    """Primal active-set method. Exact up to round-off on small problems."""
    m = len(g)
    if x0 is None:
        x = np.zeros(m)
        x[int(np.argmax(g))] = 1.0
    else:
        x = np.maximum(np.asarray(x0, dtype=float), 0.0)
        x /= x.sum()
    free = x > 0
    scale = max(1.0, np.abs(g).max(), np.abs(H).max() if H.size else 0.0)
    eig_floor = 1e-13 * scale

    for _ in range(max_iter):
        S = np.flatnonzero(free)
        r = g - H @ x
        d_S = np.zeros(len(S))
        ray = False
        if len(S) > 1:
            Z = _complement_basis(len(S))
            M = Z.T @ H[np.ix_(S, S)] @ Z
            lam, U = np.linalg.eigh(0.5 * (M + M.T))
            rz = U.T @ (Z.T @ r[S])
            flat = lam <= eig_floor
            if np.linalg.norm(rz[flat]) > 1e-12 * scale:
                # linear ascent direction inside the flat subspace
                ray = True
                dz = U[:, flat] @ rz[flat]
            else:
                dz = U[:, ~flat] @ (rz[~flat] / lam[~flat])
            d_S = Z @ dz

        if np.abs(d_S).max(initial=0.0) > 1e-15:
            xs = x[S]
            neg = d_S < -1e-15
            ratios = np.full(len(S), np.inf)
            ratios[neg] = xs[neg] / -d_S[neg]
            j = int(np.argmin(ratios))
            alpha = ratios[j] if ray else min(1.0, ratios[j])
            x[S] = np.maximum(xs + alpha * d_S, 0.0)
            if alpha == ratios[j]:
                x[S[j]] = 0.0
                free[S[j]] = False
                x /= x.sum()
                continue
            x /= x.sum()

        r = g - H @ x
        nu = r[S].mean()
        out = np.flatnonzero(~free)
        if len(out) == 0:
            break
        viol = r[out] - nu
        k = int(np.argmax(viol))
        if viol[k] <= tol * scale:
            break
        free[out[k]] = True
    return x


def solve(H, g, x0=None, warm_iters=200, tol=1e-12):
    """Mirror-ascent warm start followed by an active-set finish."""
    m = len(g)
    if m == 1:
        return np.ones(1)
    start = np.full(m, 1.0 / m) if x0 is None else np.asarray(x0, dtype=float)
    x = mirror_ascent(H, g, start, iters=warm_iters)
    x[x < 1e-9 * x.max()] = 0.0
    return active_set(H, g, x, tol=tol)
