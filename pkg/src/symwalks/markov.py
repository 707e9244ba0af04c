"""Finite-state Markov generators, kernels and principal eigenpairs.

Conventions
-----------
A generator is specified by a matrix ``h`` with non-positive off-diagonal
entries.  Jumps ``x -> y`` happen at rate ``-h[y, x]``; the row-convention
rate matrix is ``L = -htilde.T`` where ``htilde`` repairs the diagonal of
``h`` so that its columns sum to zero.  The leftover diagonal
``hD = diag(htilde) - diag(h)`` acts as a potential, and
``L + diag(hD) = -h.T`` (exposed as :attr:`Generator.sub_generator`).

Lattice Laplacians with absorbing boundary are sub-Markov: their ``L`` is the
Dirichlet Laplacian itself and ``killing`` holds the leak rate of each site.

Every kernel matrix is indexed ``[start, end]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .errors import (
    NegativeTime,
    NonfiniteExponential,
    PositiveOffDiagonal,
    Reducible,
)

KERNEL_KINDS = ("transition", "feynman_kac", "boltzmann", "martingale")


@dataclass(frozen=True)
class StateSpace:
    """Ordered state labels with a symmetric adjacency relation.

    Lattice boxes carry ``lattice_dim`` and use integer-tuple labels; abstract
    spaces use arbitrary hashable labels (numeric labels double as state
    values for mean paths).
    """

    states: tuple
    lattice_dim: int | None = None
    metric: str = "l1"
    edges: frozenset = field(default=frozenset(), compare=False)

    def __post_init__(self):
        if len(set(self.states)) != len(self.states):
            raise ValueError("state labels must be unique")
        if self.metric not in ("l1", "max"):
            raise ValueError(f"unknown metric {self.metric!r}")

    @classmethod
    def abstract(cls, labels, edges=()):
        labels = tuple(range(labels)) if isinstance(labels, int) else tuple(labels)
        return cls(states=labels, edges=frozenset(frozenset(e) for e in edges))

    @classmethod
    def box(cls, intervals, metric="l1"):
        """Product of inclusive integer intervals ``[(lo, hi), ...]``."""
        intervals = [tuple(int(v) for v in iv) for iv in intervals]
        if any(lo > hi for lo, hi in intervals):
            raise ValueError("empty interval in box")
        ranges = [range(lo, hi + 1) for lo, hi in intervals]
        return cls(states=tuple(itertools.product(*ranges)),
                   lattice_dim=len(intervals), metric=metric)

    @property
    def n(self):
        return len(self.states)

    @property
    def is_lattice(self):
        return self.lattice_dim is not None

    @cached_property
    def _index(self):
        return {s: i for i, s in enumerate(self.states)}

    def index(self, label):
        return self._index[label]

    def __contains__(self, label):
        return label in self._index

    @property
    def lattice_degree(self):
        """Number of neighbours of a site in the full lattice."""
        if not self.is_lattice:
            raise ValueError("not a lattice space")
        d = self.lattice_dim
        return 2 * d if self.metric == "l1" else 3 ** d - 1

    def neighbours(self, site):
        """All lattice neighbours of ``site`` in Z^d (inside or outside the box)."""
        d = self.lattice_dim
        if self.metric == "l1":
            for i in range(d):
                for s in (-1, 1):
                    yield tuple(c + s if j == i else c for j, c in enumerate(site))
        else:
            for delta in itertools.product((-1, 0, 1), repeat=d):
                if any(delta):
                    yield tuple(c + e for c, e in zip(site, delta))

    @cached_property
    def adjacency(self):
        n = self.n
        adj = np.zeros((n, n), dtype=bool)
        if self.is_lattice:
            for i, s in enumerate(self.states):
                for t in self.neighbours(s):
                    j = self._index.get(t)
                    if j is not None:
                        adj[i, j] = True
        else:
            for e in self.edges:
                a, b = tuple(e)
                adj[self.index(a), self.index(b)] = adj[self.index(b), self.index(a)] = True
        return adj

    @cached_property
    def values(self):
        """State values: lattice coordinates ``(n, d)`` or numeric labels ``(n,)``."""
        if self.is_lattice:
            return np.array(self.states, dtype=float).reshape(self.n, self.lattice_dim)
        try:
            return np.array(self.states, dtype=float)
        except (TypeError, ValueError):
            return np.arange(self.n, dtype=float)

    def enlarged(self):
        """The box grown by one layer, so that boundary exits stay representable."""
        if not self.is_lattice:
            raise ValueError("not a lattice space")
        arr = np.array(self.states)
        lo, hi = arr.min(axis=0), arr.max(axis=0)
        return StateSpace.box([(a - 1, b + 1) for a, b in zip(lo, hi)], metric=self.metric)


@dataclass(frozen=True, eq=False)
class Generator:
    h: np.ndarray
    htilde: np.ndarray
    hD: np.ndarray
    L: np.ndarray
    space: StateSpace | None = None
    killing: np.ndarray | None = None

    def __post_init__(self):
        if self.killing is None:
            object.__setattr__(self, "killing", np.zeros(self.h.shape[0]))

    @property
    def n(self):
        return self.h.shape[0]

    @property
    def sub_generator(self):
        """``L + diag(hD)``; equals ``-h.T``."""
        return self.L + np.diag(self.hD)

    @property
    def values(self):
        if self.space is not None:
            return self.space.values
        return np.arange(self.n, dtype=float)

    @property
    def is_conservative(self):
        return not np.any(self.killing)

    @property
    def max_exit_rate(self):
        return float(np.max(-np.diag(self.L))) if self.n else 0.0


@dataclass(frozen=True, eq=False)
class Kernel:
    matrix: np.ndarray
    horizon: float
    kind: str

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class EigenPair:
    value: float
    vector: np.ndarray


def _as_square(h):
    h = np.array(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    return h


def build_generator(h, space=None):
    """Derive ``htilde``, ``hD`` and the rate matrix ``L`` from ``h``."""
    h = _as_square(h)
    n = h.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(h[off] > 0):
        i, j = np.argwhere((h > 0) & off)[0]
        raise PositiveOffDiagonal(f"h[{i}][{j}] = {h[i, j]} > 0")
    if space is not None and space.n != n:
        raise ValueError("state space size does not match h")
    htilde = np.where(off, h, 0.0)
    np.fill_diagonal(htilde, -htilde.sum(axis=0))
    hD = np.diag(htilde) - np.diag(h)
    L = -htilde.T
    return Generator(h=h, htilde=htilde, hD=hD, L=L, space=space)


def expm(M, t=1.0):
    """``exp(t M)``: eigendecomposition when ``M`` is symmetric, Pade otherwise."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return M.copy()
    if t == 0:
        return np.eye(M.shape[0])
    if np.array_equal(M, M.T):
        w, V = np.linalg.eigh(M)
        out = (V * np.exp(t * w)) @ V.T
    else:
        out = scipy.linalg.expm(t * M)
    if not np.all(np.isfinite(out)):
        raise NonfiniteExponential("matrix exponential overflowed")
    return out


def transition_kernel(g, t):
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    P = expm(g.L, t)
    # entries are probabilities; clip the rounding noise below zero
    P = np.clip(P, 0.0, None)
    return Kernel(P, float(t), "transition")


def _confined_indices(g, confine):
    if confine is None:
        return np.arange(g.n)
    idx = []
    for c in confine:
        if isinstance(c, list):
            c = tuple(c)
        if g.space is not None and c in g.space:
            idx.append(g.space.index(c))
        else:
            idx.append(int(c))
    return np.array(sorted(set(idx)), dtype=int)


def feynman_kac_kernel(g, f, beta, confine=None):
    """``E_x[exp(int_0^beta f(xi_s) ds) 1{xi stays in confine} 1{xi_beta = y}]``.

    ``confine`` lists state labels (or indices) of the allowed set; the walk is
    killed on leaving it, so rows and columns outside the set are zero.
    """
    if beta <= 0:
        raise NegativeTime(f"beta = {beta} must be positive")
    f = np.broadcast_to(np.asarray(f, dtype=float), (g.n,))
    idx = _confined_indices(g, confine)
    M = (g.L + np.diag(f))[np.ix_(idx, idx)]
    K = np.zeros((g.n, g.n))
    K[np.ix_(idx, idx)] = np.clip(expm(M, beta), 0.0, None)
    return Kernel(K, float(beta), "feynman_kac")


def boltzmann_kernel(g, beta):
    """``[x, y] -> exp(-beta h)[y, x]``, the Feynman-Kac kernel of the potential ``hD``."""
    if beta <= 0:
        raise NegativeTime(f"beta = {beta} must be positive")
    K = np.clip(expm(-g.h.T, beta), 0.0, None)
    return Kernel(K, float(beta), "boltzmann")


def laplacian_matrix(space, boundary="absorbing"):
    """Negative semidefinite lattice Laplacian restricted to ``space``.

    ``absorbing``: the diagonal is minus the full lattice degree, so mass leaks
    through the boundary.  ``internal``: minus the degree inside the box.
    """
    if not space.is_lattice:
        raise ValueError("laplacian_matrix needs a lattice box")
    A = space.adjacency.astype(float)
    if boundary == "absorbing":
        np.fill_diagonal(A, -float(space.lattice_degree))
    elif boundary == "internal":
        np.fill_diagonal(A, -A.sum(axis=1))
    else:
        raise ValueError(f"unknown boundary mode {boundary!r}")
    return A


def lattice_laplacian(space, boundary="absorbing"):
    """Simple random walk generator on a box with ``L`` equal to the Laplacian.

    In internal mode this is an ordinary conservative generator.  In absorbing
    mode the walk is killed at rate ``deg_lattice - deg_box`` on the boundary;
    ``h = htilde = -A`` and ``hD = 0`` so that the Boltzmann kernel and the
    unweighted Feynman-Kac kernel both equal ``exp(beta A)``.
    """
    A = laplacian_matrix(space, boundary)
    if boundary == "internal":
        return build_generator(-A.T, space=space)
    killing = -A.sum(axis=1)
    return Generator(h=-A.T, htilde=-A.T, hD=np.zeros(space.n), L=A.copy(),
                     space=space, killing=killing)


def _irreducible(A):
    n = A.shape[0]
    if n <= 1:
        return True
    pattern = (A != 0) & ~np.eye(n, dtype=bool)
    ncomp, _ = connected_components(pattern, directed=True, connection="strong")
    return ncomp == 1


def principal_eig(A, symmetric_tol=1e-12):
    """Maximal eigenvalue and positive unit eigenvector of a symmetric irreducible matrix."""
    A = _as_square(A)
    if not np.allclose(A, A.T, rtol=0.0, atol=symmetric_tol):
        raise ValueError("principal_eig expects a symmetric matrix")
    if not _irreducible(A):
        raise Reducible("off-diagonal pattern is not irreducible")
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    u = V[:, -1]
    if u.sum() < 0:
        u = -u
    # Perron vector: any negative entries are rounding noise
    u = np.abs(u)
    u /= np.linalg.norm(u)
    return EigenPair(float(w[-1]), u)


def eigen_spectrum(A):
    """Full symmetric eigendecomposition (ascending), used for eigenvalue derivatives."""
    A = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    return np.linalg.eigh(A)
