"""Traces over the symmetric (bosonic) subspace and the mean-field free energy.

Three routes to ``Tr_+ exp(-beta sum_i h_i)`` are provided: the occupation
number basis, the cycle-type recursion and a brute-force permanent sum.  The
mean-field operator ``sum_i h_i - N f(x^(N))`` lives on the occupation basis;
its large-``N`` free energy is compared with the variational value
``beta sup_u {f(u) - R(u)}``, where ``R`` is the Legendre transform of the
principal eigenvalue of ``a X - h``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import DimensionOverflow, DomainError
from .markov import StateSpace, build_generator, expm
from .rates import pair_entropy_min

MAX_DIMENSION = 100_000

TELEGRAPH_H = np.array([[0.5, -0.5], [-0.5, 0.5]])
TELEGRAPH_X = np.diag([1.0, -1.0])


def telegraph_generator():
    """Two states labelled ``+1, -1`` flipping at rate 1/2."""
    return build_generator(TELEGRAPH_H, space=StateSpace.abstract((1, -1)))


def telegraph_rate(u):
    """Closed-form rate ``(1 - sqrt(1 - u**2)) / 2`` of the telegraph mean."""
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > 1):
        raise DomainError("telegraph rate is defined for |u| <= 1")
    out = 0.5 * (1.0 - np.sqrt(1.0 - u ** 2))
    return float(out) if out.ndim == 0 else out


def telegraph_eigenvalue(a):
    """Principal eigenvalue ``-1/2 + sqrt(1/4 + a**2)`` of ``a sigma_z - (1 - sigma_x)/2``."""
    a = np.asarray(a, dtype=float)
    return -0.5 + np.sqrt(0.25 + a ** 2)


# -- occupation basis ---------------------------------------------------------

def symmetric_dimension(n, N):
    return math.comb(N + n - 1, n - 1)


def _compositions(N, n):
    """Occupation tuples summing to ``N``, first coordinate largest first."""
    if n == 1:
        yield (N,)
        return
    for k in range(N, -1, -1):
        for rest in _compositions(N - k, n - 1):
            yield (k,) + rest


@dataclass(frozen=True, eq=False)
class SymmetricBasis:
    n: int
    N: int
    occupations: tuple

    @classmethod
    def build(cls, n, N):
        dim = symmetric_dimension(n, N)
        if dim > MAX_DIMENSION:
            raise DimensionOverflow(f"symmetric dimension {dim} exceeds {MAX_DIMENSION}")
        return cls(n, N, tuple(_compositions(N, n)))

    @property
    def dimension(self):
        return len(self.occupations)

    def index(self):
        return {occ: i for i, occ in enumerate(self.occupations)}


def lift_sum_operator(a, basis):
    """Matrix of ``sum_i a_i`` on the occupation basis.

    Hopping a particle from mode ``k`` to mode ``j`` carries the amplitude
    ``sqrt(n_k (n_j + 1)) a[j, k]``.
    """
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("one-body operator must be symmetric")
    idx = basis.index()
    D = basis.dimension
    M = np.zeros((D, D))
    diag = np.diag(a)
    for i, occ in enumerate(basis.occupations):
        occ_arr = np.array(occ)
        M[i, i] = float(occ_arr @ diag)
        for k in range(basis.n):
            if occ[k] == 0:
                continue
            for j in range(basis.n):
                if j == k or a[j, k] == 0:
                    continue
                new = list(occ)
                new[k] -= 1
                new[j] += 1
                M[idx[tuple(new)], i] += math.sqrt(occ[k] * (occ[j] + 1)) * a[j, k]
    return M


def _spectral(M, fun):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * fun(w)) @ V.T


@dataclass(frozen=True, eq=False)
class MeanFieldProblem:
    h: np.ndarray
    x: np.ndarray
    f: object
    beta: float
    N: int

    def __post_init__(self):
        for name in ("h", "x"):
            m = np.asarray(getattr(self, name), dtype=float)
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, 0.5 * (m + m.T))
        if self.h.shape != self.x.shape:
            raise ValueError("h and x must have the same shape")

    @property
    def n(self):
        return self.h.shape[0]

    def with_N(self, N):
        return MeanFieldProblem(self.h, self.x, self.f, self.beta, N)


def _fvals(f, u):
    if f is None:
        return np.zeros_like(u)
    return np.asarray(f(u), dtype=float) * np.ones_like(u)


def mean_field_operator(prob, basis=None):
    """``sum_i h_i - N f(x^(N))`` with ``x^(N) = (1/N) sum_i x_i`` by spectral calculus."""
    basis = basis or SymmetricBasis.build(prob.n, prob.N)
    H = lift_sum_operator(prob.h, basis)
    if prob.f is None:
        return H
    X = lift_sum_operator(prob.x, basis) / prob.N
    return H - prob.N * _spectral(X, lambda w: _fvals(prob.f, w))


def log_symmetric_trace_exact(H_sym, beta):
    w = np.linalg.eigvalsh(0.5 * (H_sym + H_sym.T))
    return float(logsumexp(-beta * w))


def symmetric_trace_exact(H_sym, beta):
    """``sum exp(-beta eigenvalue)`` of an operator on the symmetric subspace."""
    return math.exp(log_symmetric_trace_exact(H_sym, beta))


def log_symmetric_trace_cycles(h, beta, N):
    """``log Tr_+ exp(-beta sum h_i)`` via ``T_N = (1/N) sum_k Tr(exp(-k beta h)) T_{N-k}``."""
    lam = np.linalg.eigvalsh(0.5 * (np.asarray(h, float) + np.asarray(h, float).T))
    # traces of powers, scaled by the largest eigenvalue of exp(-beta h)
    lq = -beta * lam
    top = lq.max()
    k = np.arange(1, N + 1)
    logt = k * top + logsumexp(np.outer(k, lq - top), axis=1) if N else np.zeros(0)
    logT = np.zeros(N + 1)
    for m in range(1, N + 1):
        logT[m] = logsumexp(logt[:m] + logT[m - 1::-1][:m]) - math.log(m)
    return float(logT[N])


def symmetric_trace_cycles(h, beta, N):
    return math.exp(log_symmetric_trace_cycles(h, beta, N))


def symmetric_trace_permanent(B, N):
    """``(1/N!) sum_sigma sum_x prod_i B[x_i, x_sigma(i)]`` by explicit enumeration.

    Enumerates all ``n**N`` configurations and all ``N!`` permutations; only
    meant as an oracle for small sizes.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if N == 0:
        return 1.0
    X = np.array(list(itertools.product(range(n), repeat=N)))
    total = 0.0
    for sigma in itertools.permutations(range(N)):
        total += np.prod(B[X, X[:, list(sigma)]], axis=1).sum()
    return total / math.factorial(N)


def finite_N_mean_field_free_energy(prob):
    """``(1/N) log Tr_+ exp(-beta (sum_i h_i - N f(x^(N))))``."""
    H = mean_field_operator(prob)
    return log_symmetric_trace_exact(H, prob.beta) / prob.N


# -- variational side ---------------------------------------------------------

def principal_tilt(a, h, x):
    """``lambda_max(a x - h)`` and the mean of ``x`` in its eigenvector."""
    w, V = np.linalg.eigh(a * x - h)
    v = V[:, -1]
    return float(w[-1]), float(v @ x @ v)


def _range_of(x):
    w = np.linalg.eigvalsh(x)
    return float(w[0]), float(w[-1])


def _endpoint_rate(h, x, top):
    w, V = np.linalg.eigh(x)
    sel = np.isclose(w, w[-1] if top else w[0], atol=1e-10)
    P = V[:, sel]
    return float(np.linalg.eigvalsh(P.T @ h @ P)[0])


def inner_rate(u, h, x):
    """``R(u) = sup_a {a u - lambda_max(a x - h)}``, the per-unit-time rate of the mean ``u``.

    The sup is attained where the eigenvector mean of ``x`` equals ``u``; at the
    ends of the spectrum of ``x`` it is the bottom of ``h`` compressed to the
    extreme eigenspace.  Outside the spectrum the rate is infinite.
    """
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    lo, hi = _range_of(x)
    if u < lo - 1e-12 or u > hi + 1e-12:
        return math.inf
    if abs(u - hi) <= 1e-12:
        return _endpoint_rate(h, x, True)
    if abs(u - lo) <= 1e-12:
        return _endpoint_rate(h, x, False)

    def slope(a):
        return u - principal_tilt(a, h, x)[1]

    a_lo, a_hi = -1.0, 1.0
    while slope(a_lo) < 0:
        a_lo *= 2
    while slope(a_hi) > 0:
        a_hi *= 2
    a = optimize.brentq(slope, a_lo, a_hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return a * u - principal_tilt(a, h, x)[0]


def inner_rate_nested(u, h, x, beta):
    """Cross-check of :func:`inner_rate` through pair measures.

    Lower bound: ``sup_a {beta a u + inf_Q [H(Q | Q1 (x) Cou) - <Q, log K^a>]} / beta``
    with the infimum from entropic mirror descent.  Upper bound: the objective
    ``H(Q*) + sup_a {beta a u - <Q*, log K^a>}`` at the mirror-descent optimizer
    ``Q*`` of the best ``a``.  Here ``K^a = exp(beta (a x - h))``.
    Returns ``(lower, upper)`` per unit time.
    """
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)

    def kernel(a):
        return expm(a * x - h, beta)

    def dual(a):
        res = pair_entropy_min(kernel(a), tol=1e-12)
        return beta * a * u + res.upper, res

    best = optimize.minimize_scalar(lambda a: -dual(a)[0], bracket=(-1.0, 1.0),
                                    method="brent", tol=1e-10)
    a_star = float(best.x)
    lower_val, res = dual(a_star)
    Q = res.q_opt.q
    q1 = Q.sum(axis=1)
    pos = Q > 0
    H = float(np.sum(Q[pos] * np.log(Q[pos] / np.broadcast_to(q1[:, None], Q.shape)[pos])))

    def jq(a):
        K = kernel(a)
        return beta * a * u - float(np.sum(Q[pos] * np.log(K[pos])))

    up = optimize.minimize_scalar(lambda a: -jq(a), bracket=(a_star - 0.5, a_star + 0.5),
                                  method="brent", tol=1e-12)
    upper_val = H + jq(float(up.x))
    return lower_val / beta, upper_val / beta


def conditioning_correction(Q, g_beta):
    """``<Q, log g_beta>``: the offset between conditioned and unconditioned rates."""
    Q = np.asarray(Q, dtype=float)
    pos = Q > 0
    return float(np.sum(Q[pos] * np.log(np.asarray(g_beta, dtype=float)[pos])))


def variational_mean_field_free_energy(prob, u_grid=None, rate=None):
    """``beta sup_u {f(u) - R(u)}`` by a grid search refined with bounded Brent steps.

    ``rate`` overrides ``R`` (for instance with a closed form).
    """
    lo, hi = _range_of(prob.x)
    grid = np.linspace(lo, hi, 101) if u_grid is None else np.asarray(u_grid, dtype=float)
    R = rate or (lambda u: inner_rate(u, prob.h, prob.x))

    def objective(u):
        return float(_fvals(prob.f, np.array(u))) - R(float(u))

    vals = np.array([objective(u) for u in grid])
    k = int(np.argmax(vals))
    best_u, best = float(grid[k]), float(vals[k])
    a = float(grid[max(k - 1, 0)])
    b = float(grid[min(k + 1, grid.size - 1)])
    if b > a:
        res = optimize.minimize_scalar(lambda u: -objective(u), bounds=(a, b),
                                       method="bounded", options={"xatol": 1e-10})
        if -res.fun > best:
            best_u, best = float(res.x), float(-res.fun)
    return prob.beta * best, best_u


def block_relaxation(u, h, x, beta, Q, blocks=8, a0=None):
    """Inner sup of the pair-measure rate over tilts that are constant on time blocks.

    Maximizes ``beta * mean(a) * u - <Q, log K^{a(.)}>`` over ``a`` in R^blocks
    where ``K^{a(.)}`` is the time-ordered product of the block exponentials.
    Returns ``(block_value, constant_value)``; the constant value is the sup
    restricted to equal block tilts.
    """
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    Q = np.asarray(Q, dtype=float)
    pos = Q > 0
    tau = beta / blocks

    def value(a):
        K = np.eye(h.shape[0])
        for ab in a:
            K = K @ expm(ab * x - h, tau)
        if np.any(K[pos] <= 0):
            return -math.inf
        return beta * float(np.mean(a)) * u - float(np.sum(Q[pos] * np.log(K[pos])))

    const = optimize.minimize_scalar(lambda c: -value(np.full(blocks, c)), bracket=(-1.0, 1.0),
                                     method="brent", tol=1e-12)
    c_star = float(const.x)
    start = np.full(blocks, c_star) if a0 is None else np.asarray(a0, dtype=float)
    res = optimize.minimize(lambda a: -value(a), start, method="BFGS",
                            options={"gtol": 1e-10, "maxiter": 2000})
    return float(-res.fun), float(-const.fun)

