"""Small smooth concave maximizers used by the rate functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    converged: bool
    iterations: int


def _armijo(fun, x, val, g, d, c1=1e-4, shrink=0.5, max_halvings=60):
    slope = float(g @ d)
    t = 1.0
    for _ in range(max_halvings):
        xn = x + t * d
        vn, gn = fun(xn)
        if np.isfinite(vn) and vn >= val + c1 * t * slope:
            return xn, vn, gn, True
        t *= shrink
    return x, val, g, False


def newton_maximize(fun, x0, tol=1e-9, maxiter=200):
    """Newton ascent for concave ``fun`` returning ``(value, gradient, neg_hessian)``.

    The negated Hessian may be singular along flat directions; the step uses
    its pseudo-inverse.
    """
    x = np.array(x0, dtype=float)
    val, g, negH = fun(x)

    def vg(z):
        v, gz, _ = fun(z)
        return v, gz

    for it in range(1, maxiter + 1):
        if np.max(np.abs(g)) <= tol:
            return OptResult(x, val, g, True, it - 1)
        d = np.linalg.pinv(negH, rcond=1e-13, hermitian=True) @ g
        if g @ d <= 0:
            d = g.copy()
        xn, vn, gn, ok = _armijo(vg, x, val, g, d)
        if not ok:
            xn, vn, gn, ok = _armijo(vg, x, val, g, g.copy())
            if not ok:
                return OptResult(x, val, g, bool(np.max(np.abs(g)) <= 10 * tol), it)
        x = xn
        val, g, negH = fun(x)
    return OptResult(x, val, g, bool(np.max(np.abs(g)) <= tol), maxiter)


def balance(B, phi=None, tol=1e-13, maxiter=200):
    """KL projection of a non-negative matrix onto probability measures with equal marginals.

    Returns ``(Q, phi)`` with ``Q = exp(phi(x)) B exp(-phi(y)) / Z``.  ``phi``
    minimizes the convex function ``F(phi) = sum B exp(phi(x) - phi(y))``,
    whose gradient is row sum minus column sum; we use damped Newton steps on
    it (the Hessian is the graph Laplacian of ``W + W.T``).
    """
    B = np.asarray(B, dtype=float)
    phi = np.zeros(B.shape[0]) if phi is None else np.array(phi, dtype=float)
    scale = B.sum()
    Bs = B / scale

    def state(ph):
        W = np.exp(ph)[:, None] * Bs * np.exp(-ph)[None, :]
        return W, W.sum()

    W, F = state(phi)
    for _ in range(maxiter):
        grad = W.sum(axis=1) - W.sum(axis=0)
        if np.max(np.abs(grad)) <= tol * F:
            break
        S = W + W.T
        np.fill_diagonal(S, 0.0)
        H = np.diag(S.sum(axis=1)) - S
        d = -np.linalg.pinv(H, rcond=1e-14, hermitian=True) @ grad
        t = 1.0
        while t > 1e-12:
            Wn, Fn = state(phi + t * d)
            if Fn <= F + 1e-4 * t * (grad @ d):
                break
            t *= 0.5
        phi = phi + t * d
        phi -= phi.mean()
        W, F = state(phi)
    return W / W.sum(), phi
