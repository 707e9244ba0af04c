"""Symmetrised random-walk ensembles.

``N`` walkers start at i.i.d. points ``x_i ~ m``; a uniform permutation
``sigma`` fixes their terminal points ``x_sigma(i)`` and each walker runs the
bridge of the generator between the two.  Weighted (unnormalised) versions
multiply by ``prod g(x_i, x_sigma(i))`` and optionally by
``exp(sum_i int V(xi_i))``; expectations under them are estimated by
self-normalised importance sampling.

Expectations of ``exp(sum_i int f(xi_i(s)) ds)`` factor over the cycles of
``sigma`` and are computed exactly from traces of powers of
``A(x, y) = m(x) g(x, y) K^{f+V}(x, y) / p(x, y)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeights, NonLinearFunctional
from .markov import Kernel, feynman_kac_kernel, transition_kernel
from .pairs import ReferenceMeasure
from .paths import BridgeSampler, PathBatch, _rng

DEFAULT_GRID = 256


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    generator: object
    beta: float
    N: int
    init: ReferenceMeasure | None = None
    weight: np.ndarray | None = None
    path_potential: np.ndarray | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.weight is not None:
            w = np.asarray(self.weight, dtype=float)
            if w.shape != (self.n, self.n) or np.any(w <= 0):
                raise ValueError("endpoint weight must be a positive n x n matrix")
            object.__setattr__(self, "weight", w)
        if self.path_potential is not None:
            object.__setattr__(self, "path_potential",
                               np.asarray(self.path_potential, dtype=float).reshape(self.n))

    @property
    def n(self):
        return self.generator.n

    @property
    def initial_law(self):
        """Sampling law of the starting points (normalised ``init``, uniform by default)."""
        if self.init is None:
            return np.full(self.n, 1.0 / self.n)
        w = self.init.weights
        return w / w.sum()

    @property
    def init_weights(self):
        return np.ones(self.n) if self.init is None else self.init.weights

    def with_N(self, N):
        return EnsembleSpec(self.generator, self.beta, N, self.init, self.weight,
                            self.path_potential)


def bose_spec(g, beta, N):
    """Spec whose weighted measure has endpoint masses equal to the Boltzmann kernel.

    Bridges of ``L`` weighted by ``p_beta(x, y) exp(int hD)`` reproduce the
    kernel ``exp(-beta h)`` entrywise; starting points are counted uniformly.
    """
    p = transition_kernel(g, beta).matrix
    return EnsembleSpec(g, beta, N, ReferenceMeasure.counting(g.n), weight=p,
                        path_potential=None if not np.any(g.hD) else g.hD)


def cycle_decomposition(perm):
    """Cycles of a permutation given as an index map ``i -> perm[i]``."""
    perm = np.asarray(perm)
    seen = np.zeros(perm.size, dtype=bool)
    cycles = []
    for i in range(perm.size):
        if not seen[i]:
            c = []
            j = i
            while not seen[j]:
                seen[j] = True
                c.append(j)
                j = int(perm[j])
            cycles.append(c)
    return cycles


def cycle_type(perm):
    """``f[k]`` = number of cycles of length ``k`` (index 0 unused)."""
    f = np.zeros(len(perm) + 1, dtype=int)
    for c in cycle_decomposition(perm):
        f[len(c)] += 1
    return f


@dataclass(frozen=True, eq=False)
class EnsembleSample:
    permutation: np.ndarray
    cycle_type: np.ndarray
    initial_points: np.ndarray
    paths: list
    log_weight: float

    @property
    def importance_weight(self):
        return float(np.exp(self.log_weight))

    @property
    def cycles(self):
        return cycle_decomposition(self.permutation)


@dataclass(frozen=True, eq=False)
class EnsembleBatch:
    """``S`` independent ensemble draws with the ``S * N`` bridges stored flat.

    Bridge ``s * N + i`` runs from ``x[s, i]`` to ``x[s, perm[s, i]]``.
    """

    perms: np.ndarray
    x: np.ndarray
    bridges: PathBatch
    log_weights: np.ndarray
    beta: float

    @property
    def size(self):
        return self.perms.shape[0]

    @property
    def N(self):
        return self.perms.shape[1]

    def sample(self, s):
        N = self.N
        paths = [self.bridges.path(s * N + i) for i in range(N)]
        return EnsembleSample(self.perms[s].copy(), cycle_type(self.perms[s]),
                              self.x[s].copy(), paths, float(self.log_weights[s]))


def _concat_batches(parts, order, beta):
    B = sum(p.size for p in parts)
    M = max((p.times.shape[1] for p in parts), default=0)
    start = np.empty(B, dtype=int)
    counts = np.empty(B, dtype=int)
    times = np.full((B, M), np.inf)
    states = np.zeros((B, M), dtype=int)
    for p, idx in zip(parts, order):
        m = p.times.shape[1]
        start[idx] = p.start
        counts[idx] = p.counts
        times[idx, :m] = p.times
        states[idx, :m] = p.states
    return PathBatch(start, beta, counts, times, states)


class EnsembleSampler:
    """Reusable sampler; caches the bridge law of the ensemble's generator."""

    def __init__(self, spec):
        self.spec = spec
        self.bridge = BridgeSampler(spec.generator, spec.beta)

    def sample_batch(self, rng, size):
        spec = self.spec
        gen = _rng(rng)
        N, n = spec.N, spec.n
        # Fisher-Yates shuffle of each row
        perms = gen.permuted(np.tile(np.arange(N), (size, 1)), axis=1)
        x = gen.choice(n, size=(size, N), p=spec.initial_law)
        y = np.take_along_axis(x, perms, axis=1)
        xs, ys = x.ravel(), y.ravel()
        parts, order = [], []
        for a in range(n):
            for b in range(n):
                idx = np.flatnonzero((xs == a) & (ys == b))
                if idx.size:
                    parts.append(self.bridge.sample(a, b, gen, idx.size))
                    order.append(idx)
        bridges = _concat_batches(parts, order, spec.beta)
        logw = np.zeros(size)
        if spec.weight is not None:
            logw += np.log(spec.weight[x, y]).sum(axis=1)
        if spec.path_potential is not None:
            logw += bridges.integrals(spec.path_potential).reshape(size, N).sum(axis=1)
        return EnsembleBatch(perms, x, bridges, logw, spec.beta)


def sample_ensemble(spec, rng):
    """One draw ``(sigma, x, bridges)`` with its importance weight."""
    return EnsembleSampler(spec).sample_batch(rng, 1).sample(0)


@dataclass(frozen=True, eq=False)
class MeanPath:
    grid: np.ndarray
    values: np.ndarray
    horizon: float

    def inner(self, other):
        """``int <Y(s), other(s)> ds`` by the left-endpoint rule."""
        w = self.horizon / self.grid.size
        return float(w * np.sum(self.values * np.asarray(other)))

    def integrate(self, f):
        """``int f(Y(s)) ds`` for ``f`` acting on state values."""
        w = self.horizon / self.grid.size
        return float(w * np.sum(f(self.values)))


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    weights: np.ndarray


def left_grid(beta, T=DEFAULT_GRID):
    return np.arange(T) * (beta / T)


def _state_values(g):
    v = np.asarray(g.values, dtype=float)
    return v


def mean_paths(batch, values, T=DEFAULT_GRID):
    """``Y_N`` on the left-endpoint grid for every draw: shape ``(S, T[, d])``."""
    S, N = batch.size, batch.N
    grid = left_grid(batch.beta, T)
    out = np.empty((S, T) + values.shape[1:])
    for k, t in enumerate(grid):
        st = batch.bridges.state_at(t).reshape(S, N)
        out[:, k] = values[st].mean(axis=1)
    return grid, out


def occupation_measures(batch, n):
    """``Z_N`` for every draw: shape ``(S, n)``."""
    lt = batch.bridges.local_times(n)
    return lt.reshape(batch.size, batch.N, n).mean(axis=1)


def observables(sample, grid_T=DEFAULT_GRID, generator=None, n=None):
    """Mean path, occupation measure and the empirical path-measure pairing.

    Returns ``(MeanPath, OccupationMeasure, apply)`` where ``apply(F)`` is
    ``(1/N) sum_i F(path_i)``.
    """
    paths = sample.paths
    N = len(paths)
    beta = paths[0].horizon
    if generator is not None:
        values = _state_values(generator)
        n = generator.n
    else:
        n = n or int(max(p.states.max() for p in paths)) + 1
        values = np.arange(n, dtype=float)
    grid = left_grid(beta, grid_T)
    Y = np.mean([values[p.state_at(grid)] for p in paths], axis=0)
    Z = np.zeros(n)
    for p in paths:
        Z += np.bincount(p.states, weights=p.holding_times(), minlength=n)
    Z /= N * beta

    def apply(F):
        return float(np.mean([F(p) for p in paths]))

    return MeanPath(grid, Y, beta), OccupationMeasure(Z), apply


# -- exact cycle sums --------------------------------------------------------

def log_partition_sequence(A, Nmax):
    """``log S_N`` for ``N = 0..Nmax`` where ``S_N = (1/N!) sum_sigma sum_x prod A(x_i, x_sigma(i))``.

    Uses ``S_N = (1/N) sum_k Tr(A^k) S_{N-k}`` with ``A`` rescaled by its
    spectral radius so that the traces stay of order one.
    """
    A = np.asarray(A, dtype=float)
    if np.any(A < 0):
        raise ValueError("kernel must be non-negative")
    out = np.full(Nmax + 1, -np.inf)
    out[0] = 0.0
    if Nmax == 0:
        return out
    rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
    if rho <= 0:
        # nilpotent: only honest traces survive, all of them zero
        return out
    B = A / rho
    logt = np.empty(Nmax + 1)
    P = np.eye(A.shape[0])
    for k in range(1, Nmax + 1):
        P = P @ B
        tr = np.trace(P)
        logt[k] = np.log(tr) if tr > 0 else -np.inf
    ls = np.full(Nmax + 1, -np.inf)
    ls[0] = 0.0
    for N in range(1, Nmax + 1):
        ls[N] = logsumexp(logt[1:N + 1] + ls[N - 1::-1][:N]) - np.log(N)
    out[1:] = ls[1:] + np.arange(1, Nmax + 1) * np.log(rho)
    return out


def exact_symmetrized_partition(K, N, m=None):
    """``log S_N`` for ``A = diag(m) K`` (``m`` defaults to counting measure)."""
    M = K.matrix if isinstance(K, Kernel) else np.asarray(K, dtype=float)
    if m is not None:
        w = m.weights if isinstance(m, ReferenceMeasure) else np.asarray(m, dtype=float)
        M = w[:, None] * M
    return float(log_partition_sequence(M, N)[N])


@dataclass(frozen=True)
class LinearFunctional:
    """``f(u) = <coeffs, u> + const`` on state values (scalar or vector)."""

    coeffs: tuple
    const: float = 0.0

    def potential(self, g):
        v = _state_values(g)
        c = np.asarray(self.coeffs, dtype=float)
        return (v.reshape(g.n, -1) @ c.reshape(-1)) + self.const

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        c = np.asarray(self.coeffs, dtype=float)
        if c.size == 1 and (u.ndim == 0 or u.shape[-1] != 1):
            return self.const + c[0] * u
        return self.const + u @ c.reshape(-1)


def _as_potential(spec, f):
    if isinstance(f, LinearFunctional):
        return f.potential(spec.generator)
    if callable(f):
        raise NonLinearFunctional("exact free energies need a per-state potential")
    f = np.asarray(f, dtype=float)
    if f.shape not in ((), (spec.n,)):
        raise NonLinearFunctional(f"potential must have one value per state, got shape {f.shape}")
    return np.broadcast_to(f, (spec.n,)).astype(float)


def cycle_matrix(spec, f):
    """``A(x,y) = m(x) g(x,y) K^{f+V}(x,y) / p(x,y)`` for the ensemble ``spec``."""
    g = spec.generator
    V = _as_potential(spec, f)
    if spec.path_potential is not None:
        V = V + spec.path_potential
    K = feynman_kac_kernel(g, V, spec.beta).matrix
    A = K
    if spec.weight is not None:
        p = transition_kernel(g, spec.beta).matrix
        with np.errstate(divide="ignore", invalid="ignore"):
            A = np.where(p > 0, spec.weight * K / p, 0.0)
    return spec.init_weights[:, None] * A


def finite_N_free_energy(spec, f, N_list):
    """``(N, (1/N) log mu_sym(exp(sum_i int_0^beta f(xi_i(s)) ds)))`` for each ``N``.

    The exponent equals ``beta * N * <f, Z_N>``.  Values are unnormalised; the
    normalised version is the difference with ``f = 0``.
    """
    N_list = [int(N) for N in N_list]
    A = cycle_matrix(spec, f)
    seq = log_partition_sequence(A, max(N_list))
    return [(N, float(seq[N] / N)) for N in N_list]


def extrapolate(N_list, values):
    """Fit ``v(N) = v_inf + a log(N) / N`` through the last two points."""
    (N1, v1), (N2, v2) = list(zip(N_list, values))[-2:]
    x1, x2 = np.log(N1) / N1, np.log(N2) / N2
    a = (v1 - v2) / (x1 - x2)
    return float(v2 - a * x2), float(a)


# -- Monte Carlo -------------------------------------------------------------

@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    std_error: float
    ess: float
    samples: int


def _log_mean_exp(logs, w):
    return logsumexp(logs, b=w) - np.log(np.sum(w))


def self_normalized(logw, logF, N, gen, n_boot=200):
    """``(1/N) log(sum w e^F / sum w)`` with bootstrap standard error and ESS."""
    logw = np.asarray(logw, dtype=float)
    logF = np.asarray(logF, dtype=float)
    S = logw.size
    lw = logw - logw.max()
    lj = lw + logF
    lj -= lj.max()
    wj = np.exp(lj)
    ess = float(wj.sum() ** 2 / np.sum(wj ** 2))
    if ess < 10:
        raise DegenerateWeights(f"effective sample size {ess:.1f} < 10")
    est = (logsumexp(lw + logF) - logsumexp(lw)) / N
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = gen.integers(0, S, S)
        boots[b] = (logsumexp(lw[idx] + logF[idx]) - logsumexp(lw[idx])) / N
    return MCEstimate(float(est), float(boots.std(ddof=1)), ess, S)


def _chunked(sampler, gen, samples, chunk):
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        yield sampler.sample_batch(gen, k)
        done += k


def path_exponents(spec, f, batch, T=DEFAULT_GRID):
    """``N * int_0^beta f(Y_N(s)) ds`` for each draw in the batch."""
    g = spec.generator
    if isinstance(f, LinearFunctional):
        # exact through local times
        V = f.potential(g)
        return batch.bridges.integrals(V).reshape(batch.size, batch.N).sum(axis=1)
    values = _state_values(g)
    _, Y = mean_paths(batch, values, T)
    fy = np.asarray(f(Y), dtype=float)
    return batch.N * (spec.beta / T) * fy.reshape(batch.size, -1).sum(axis=1)


def mc_mean_field_estimate(spec, f, N, samples, rng, grid_T=DEFAULT_GRID, chunk=None):
    """Estimate ``(1/N) log E[exp(N int_0^beta f(Y_N(s)) ds)]`` under the weighted ensemble.

    Draws come from the unweighted ensemble with uniform starting points; the
    spec's endpoint weights and path potential enter as importance weights.
    """
    gen = _rng(rng)
    spec = spec.with_N(int(N))
    if spec.init is not None:
        # sample uniformly, fold the initial weights into the importance weight
        base = EnsembleSpec(spec.generator, spec.beta, spec.N, None, spec.weight,
                            spec.path_potential)
        logm = np.log(spec.init.weights)
    else:
        base, logm = spec, None
    sampler = EnsembleSampler(base)
    chunk = chunk or max(1, 20000 // spec.N)
    logw, logF = [], []
    for batch in _chunked(sampler, gen, samples, chunk):
        lw = batch.log_weights
        if logm is not None:
            lw = lw + logm[batch.x].sum(axis=1)
        logw.append(lw)
        logF.append(path_exponents(spec, f, batch, grid_T))
    return self_normalized(np.concatenate(logw), np.concatenate(logF), spec.N, gen)
