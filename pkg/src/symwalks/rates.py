"""Rate functions of occupation measures for symmetrised walks on finite boxes.

The Dirichlet form of ``sqrt(p)`` (Donsker-Varadhan functional), its Legendre
representation through the principal eigenvalue of ``A + diag(f)``, the
pair-measure functional ``J^Q`` and its entropy-penalised infimum over
equal-marginal pair measures, together with the explicit optimizers that
certify the identity ``J_sym = beta * I``.

``A`` is the lattice Laplacian of the chosen boundary mode (negative
semidefinite).  Most functions also accept a :class:`Generator` in place of a
lattice box; then ``A`` is its symmetric sub-generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._optim import balance, newton_maximize
from .errors import NonConvergence, NumericalFailure, SupportViolation, ZeroMassSite
from .markov import Generator, Kernel, StateSpace, eigen_spectrum, expm, laplacian_matrix, principal_eig
from .pairs import PairMeasure, relative_entropy

DEGENERATE_EPS = 1e-12


def operator(space, boundary="absorbing"):
    """The symmetric matrix ``A`` behind a problem."""
    if isinstance(space, Generator):
        A = space.sub_generator
    elif isinstance(space, StateSpace):
        A = laplacian_matrix(space, boundary)
    else:
        A = np.asarray(space, dtype=float)
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("rate functions need a symmetric generator")
    return 0.5 * (A + A.T)


def _measure(p, space):
    """Occupation vector indexed like ``space``; dicts may be keyed by labels."""
    n = space.n if hasattr(space, "n") else np.shape(space)[0]
    if hasattr(p, "weights"):
        p = p.weights
    if isinstance(p, dict):
        states = getattr(space, "states", None) or getattr(getattr(space, "space", None), "states", None)
        vec = np.zeros(n)
        for k, v in p.items():
            k = tuple(k) if isinstance(k, list) else k
            if states is None or k not in states:
                if v != 0:
                    raise SupportViolation(f"mass at {k} outside the box")
                continue
            vec[states.index(k)] = v
        p = vec
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise SupportViolation(f"occupation vector has shape {p.shape}, box has {n} sites")
    if np.any(p < 0):
        raise SupportViolation("negative mass")
    return p


# -- Dirichlet form and its Legendre dual ------------------------------------

def dv_rate(p, space, boundary="absorbing"):
    """``(1/2) sum over ordered adjacent pairs of (sqrt p(x) - sqrt p(y))**2``.

    Absorbing mode extends ``p`` by zero to the whole lattice; internal mode
    keeps only pairs inside the box.
    """
    p = _measure(p, space)
    u = np.sqrt(p)
    if isinstance(space, Generator):
        A = operator(space)
        return float(-u @ A @ u)
    idx = {s: i for i, s in enumerate(space.states)}
    total = 0.0
    for i, s in enumerate(space.states):
        for t in space.neighbours(s):
            j = idx.get(t)
            if j is not None:
                total += (u[i] - u[j]) ** 2
            elif boundary == "absorbing":
                # the pair (s, t) and its reverse (t, s)
                total += 2.0 * u[i] ** 2
    return 0.5 * total


def eigenvalue_derivatives(M):
    """``lambda_max(M)``, its gradient ``u**2`` and Hessian in the diagonal of ``M``."""
    w, V = eigen_spectrum(M)
    u0 = V[:, -1]
    lam = w[-1]
    grad = u0 ** 2
    gaps = lam - w[:-1]
    P = u0[:, None] * V[:, :-1]
    with np.errstate(divide="ignore"):
        inv = np.where(gaps > 1e-14, 1.0 / gaps, 0.0)
    hess = 2.0 * (P * inv) @ P.T
    return lam, grad, hess


@dataclass
class LegendreResult:
    value: float
    f: np.ndarray
    converged: bool
    iterations: int


def legendre_solve(p, space, boundary="absorbing", f0=None, tol=1e-9, maxiter=500):
    """``sup_f {<f, p> - lambda(A + diag f)}`` by Newton ascent from ``f0`` (zero by default)."""
    p = _measure(p, space)
    A = operator(space, boundary)

    def fun(f):
        lam, grad, hess = eigenvalue_derivatives(A + np.diag(f))
        return float(f @ p - lam), p - grad, hess

    x0 = np.zeros(p.size) if f0 is None else np.asarray(f0, dtype=float)
    res = newton_maximize(fun, x0, tol=tol, maxiter=maxiter)
    return LegendreResult(res.value, res.x, res.converged, res.iterations)


def legendre_rate(p, space, boundary="absorbing", strict=False, **kw):
    """Legendre transform of the principal eigenvalue evaluated at ``p``.

    Returns the best value found.  With ``strict=True`` a failure to reach the
    gradient tolerance raises :class:`NonConvergence` (the partial result is
    attached as ``err.result``).
    """
    res = legendre_solve(p, space, boundary, **kw)
    if strict and not res.converged:
        err = NonConvergence(f"Legendre ascent stopped after {res.iterations} iterations")
        err.result = res
        raise err
    return res.value


# -- pair-measure functional -------------------------------------------------

def _phi_matrix(mu, beta):
    """``Phi[k, l] = int_0^beta exp(s mu_k + (beta - s) mu_l) ds``, overflow-safe."""
    hi = np.maximum(mu[:, None], mu[None, :])
    gap = np.abs(mu[:, None] - mu[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gap > 1e-12, -np.expm1(-beta * gap) / gap, beta * (1 - 0.5 * beta * gap))
    return np.exp(beta * hi) * ratio


def log_kernel_and_gradient(A, f, beta, Q):
    """``sum Q log K^f`` and its gradient in ``f`` via the spectral Duhamel formula."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise NumericalFailure("non-finite potential")
    mu, V = np.linalg.eigh(A + np.diag(f))
    with np.errstate(over="ignore", invalid="ignore"):
        K = (V * np.exp(beta * mu)) @ V.T
        mask = Q > 0
        if not np.all(np.isfinite(K)) or np.any(K[mask] <= 0):
            raise NumericalFailure("kernel overflowed or vanishes on the support of Q")
        val = float(np.sum(Q[mask] * np.log(K[mask])))
        W = np.where(mask, Q / np.where(mask, K, 1.0), 0.0)
        C = V.T @ W @ V
        G = V @ (_phi_matrix(mu, beta) * C) @ V.T
    if not np.all(np.isfinite(G)):
        raise NumericalFailure("gradient overflowed")
    return val, np.diag(G).copy(), K


@dataclass
class JQResult:
    value: float
    f: np.ndarray
    converged: bool
    iterations: int


def J_Q_solve(p, q, beta, space, boundary="absorbing", f0=None, tol=1e-9, maxiter=200,
              fd_step=1e-5):
    """Newton ascent for ``J^Q``.

    The gradient is analytic; the Hessian is a central difference of it,
    which only serves as a preconditioner so its error does not bias the
    optimum.
    """
    p = _measure(p, space)
    A = operator(space, boundary)
    Q = q.to_float().q if isinstance(q, PairMeasure) else np.asarray(q, dtype=float)
    n = p.size

    def value_grad(f):
        try:
            v, g, _ = log_kernel_and_gradient(A, f, beta, Q)
        except NumericalFailure:
            return -math.inf, np.zeros_like(f)
        return beta * float(f @ p) - v, beta * p - g

    def fun(f):
        val, grad = value_grad(f)
        H = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = fd_step
            H[:, j] = (value_grad(f + e)[1] - value_grad(f - e)[1]) / (2 * fd_step)
        return val, grad, -0.5 * (H + H.T)

    x0 = np.zeros(n) if f0 is None else np.asarray(f0, dtype=float)
    res = newton_maximize(fun, x0, tol=tol * max(1.0, beta), maxiter=maxiter)
    return JQResult(res.value, res.x, res.converged, res.iterations)


def J_Q(p, q, beta, space, boundary="absorbing", strict=False, **kw):
    """``sup_f {beta <f, p> - sum Q(x,y) log K^f_beta(x,y)}``."""
    res = J_Q_solve(p, q, beta, space, boundary, **kw)
    if strict and not res.converged:
        err = NonConvergence(f"J_Q ascent stopped after {res.iterations} iterations")
        err.result = res
        raise err
    return res.value


# -- explicit optimizers -----------------------------------------------------

def optimal_potential(p, space, boundary="absorbing"):
    """``f* = -(A sqrt p) / sqrt p``: ``A + diag f*`` has ``sqrt p`` as eigenvector for 0."""
    p = _measure(p, space)
    if np.any(p <= 0):
        raise ZeroMassSite(f"p vanishes at site {int(np.flatnonzero(p <= 0)[0])}")
    u = np.sqrt(p)
    return -(operator(space, boundary) @ u) / u


def fk_matrix(A, f, beta):
    return expm(A + np.diag(f), beta)


def optimal_pair_measure(p, beta, space, boundary="absorbing"):
    """``Q*(x, y) = u(x) u(y) K^{f*}_beta(x, y)`` with ``u = sqrt p``."""
    p = _measure(p, space)
    f = optimal_potential(p, space, boundary)
    u = np.sqrt(p)
    K = fk_matrix(operator(space, boundary), f, beta)
    return PairMeasure(u[:, None] * K * u[None, :], getattr(space, "states", None)
                       if isinstance(space, StateSpace) else None)


def martingale_kernel(f, beta, space, boundary="absorbing"):
    """Doob transform ``exp(-beta lambda) K^f(x, y) u_f(y) / u_f(x)``."""
    A = operator(space, boundary)
    f = np.broadcast_to(np.asarray(f, dtype=float), (A.shape[0],))
    ep = principal_eig(A + np.diag(f))
    K = fk_matrix(A, f, beta)
    u = ep.vector
    M = np.exp(-beta * ep.value) * K * u[None, :] / u[:, None]
    return Kernel(M, float(beta), "martingale")


def euler_lagrange_residual(p, beta, space, boundary="absorbing", f=None, q=None):
    """``max_z |beta p(z) - sum Q(x,y) d/df_z log K^f(x,y)| / beta``.

    Defaults to the certificate pair ``(f*, Q*)``; passing ``f`` (and ``q``)
    evaluates the stationarity defect elsewhere.
    """
    p = _measure(p, space)
    A = operator(space, boundary)
    if q is None:
        q = optimal_pair_measure(p, beta, space, boundary)
    Q = q.q if isinstance(q, PairMeasure) else np.asarray(q, dtype=float)
    if f is None:
        f = optimal_potential(p, space, boundary)
    _, g, _ = log_kernel_and_gradient(A, np.asarray(f, dtype=float), beta, Q)
    return float(np.max(np.abs(beta * p - g)) / beta)


# -- J_sym -------------------------------------------------------------------

@dataclass
class SaddleCertificate:
    f_star: np.ndarray
    q_star: PairMeasure
    lower: float
    upper: float
    degenerate: bool = False

    @property
    def gap(self):
        return self.upper - self.lower

    @property
    def value(self):
        return 0.5 * (self.upper + self.lower)

    def to_dict(self):
        return {"f_star": [float(v) for v in self.f_star],
                "q_star": self.q_star.to_float().q.tolist(),
                "lower": self.lower, "upper": self.upper, "gap": self.gap,
                "degenerate": self.degenerate}


def _counting_entropy(Q, ref):
    return relative_entropy(Q, ref)


def J_sym(p, beta, space, boundary="absorbing", ref=None):
    """Certified two-sided bounds on ``inf_Q {H(Q | Q1 (x) ref) + J^Q(p)}``.

    The upper bound evaluates the objective at the explicit pair ``Q*`` (with
    ``J^Q`` maximized numerically from ``f = 0``); the lower bound is
    ``beta`` times the Legendre rate.  When ``p`` has empty sites the explicit
    pair does not exist and a nested mirror-descent solve on the
    ``eps``-regularized measure provides the upper bound (``degenerate=True``).
    """
    p = _measure(p, space)
    if np.any(p <= 0):
        return _J_sym_degenerate(p, beta, space, boundary, ref)
    f_star = optimal_potential(p, space, boundary)
    q_star = optimal_pair_measure(p, beta, space, boundary)
    jq = J_Q_solve(p, q_star, beta, space, boundary)
    A = operator(space, boundary)
    at_star, _, _ = log_kernel_and_gradient(A, f_star, beta, q_star.q)
    jq_value = max(jq.value, beta * float(f_star @ p) - at_star)
    upper = _counting_entropy(q_star.q, ref) + jq_value
    lower = beta * legendre_rate(p, space, boundary)
    return SaddleCertificate(f_star, q_star, lower, upper)


def nested_J_sym(p, beta, space, boundary="absorbing", ref=None, tol=1e-9, maxiter=500):
    """Generic ``inf_Q`` by entropic mirror descent with the inner ``sup_f`` solved each step.

    With unit step the update is ``Q <- balance(Q1(x) ref(y) K^{f_Q}(x, y))``.
    Returns ``(value, Q, f)``.
    """
    p = _measure(p, space)
    n = p.size
    A = operator(space, boundary)
    m = np.ones(n) if ref is None else np.asarray(getattr(ref, "weights", ref), dtype=float)
    Q = np.outer(p, p)
    f = np.zeros(n)
    best = math.inf
    phi = None
    Qbest, fbest = Q, f
    for _ in range(maxiter):
        jq = J_Q_solve(p, Q, beta, A, f0=f)
        f = jq.f
        val = relative_entropy(Q, m) + jq.value
        if val < best - tol:
            best, Qbest, fbest = val, Q, f
        elif val >= best - tol:
            best = min(best, val)
            break
        K = fk_matrix(A, f, beta)
        Q, phi = balance(Q.sum(axis=1)[:, None] * K * m[None, :], phi)
    return best, Qbest, fbest


def _J_sym_degenerate(p, beta, space, boundary, ref):
    n = p.size
    pe = (p + DEGENERATE_EPS) / (1 + n * DEGENERATE_EPS)
    value, Q, f = nested_J_sym(pe, beta, space, boundary, ref)
    lower = beta * legendre_rate(pe, space, boundary)
    return SaddleCertificate(f, PairMeasure(Q), lower, value, degenerate=True)


# -- combinatorial rate ------------------------------------------------------

@dataclass
class EntropyMinResult:
    value: float
    q_opt: PairMeasure
    lower: float
    upper: float
    iterations: int

    @property
    def gap(self):
        return self.upper - self.lower


def perron_certificate(B):
    """``(rho, q)`` with ``q(x,y) = l(x) B(x,y) r(y) / (rho <l, r>)``."""
    w, Vr = np.linalg.eig(B)
    k = int(np.argmax(w.real))
    rho = float(w[k].real)
    r = np.abs(Vr[:, k].real)
    wl, Vl = np.linalg.eig(B.T)
    l = np.abs(Vl[:, int(np.argmax(wl.real))].real)
    q = l[:, None] * B * r[None, :] / (rho * float(l @ r))
    return rho, q


def pair_entropy_min(g, ref=None, tol=1e-9, maxiter=10_000):
    """``inf_Q sum Q log(Q / (Q1(x) ref(y) g(x, y)))`` over equal-marginal ``Q``.

    Entropic mirror descent: each step multiplies by the kernel and projects
    back onto equal marginals by balancing.  The dual bound
    ``-log max_x (B r)(x) / r(x)`` for the positive vector ``r = exp(-phi)``
    produced by the projection certifies the optimality gap.
    """
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    if np.any(g < 0):
        raise ValueError("kernel must be non-negative")
    m = np.ones(n) if ref is None else np.asarray(getattr(ref, "weights", ref), dtype=float)
    B = g * m[None, :]
    Q = np.full((n, n), 1.0 / n ** 2) * (B > 0)
    Q /= Q.sum()
    phi = None
    upper, lower = math.inf, -math.inf
    for it in range(1, maxiter + 1):
        Q, phi = balance(Q.sum(axis=1)[:, None] * B, phi)
        upper = _objective(Q, B)
        r = np.exp(-phi)
        lower = -math.log(float(np.max((B @ r) / r)))
        if upper - lower <= tol:
            return EntropyMinResult(upper, PairMeasure(Q), lower, upper, it)
    raise NonConvergence(f"mirror descent gap {upper - lower:.3e} after {maxiter} iterations")


def _objective(Q, B):
    q1 = Q.sum(axis=1)
    pos = Q > 0
    return float(np.sum(Q[pos] * np.log(Q[pos] / (q1[:, None] * B)[pos])))
