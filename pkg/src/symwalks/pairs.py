"""Pair probability measures with equal marginals.

Matrices may hold floats or :class:`fractions.Fraction` objects (numpy object
arrays); the constructions below are written so that both modes work, which
lets the marginal identities be checked exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    AlphaTooLarge,
    AnchorMassTooSmall,
    AnchorOutsideBox,
    BoxTooLargeForN,
    ConditionViolated,
    NumericalFailure,
)


def _xlogy_ratio(a, b):
    """Sum of ``a * log(a / b)`` with ``0 log 0 = 0`` and ``a log(a/0) = inf``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = a > 0
    if np.any(pos & (b <= 0)):
        return math.inf
    return float(np.sum(a[pos] * np.log(a[pos] / b[pos])))


def is_exact(arr):
    return np.asarray(arr).dtype == object


def as_fractions(arr):
    return np.vectorize(Fraction, otypes=[object])(np.asarray(arr))


@dataclass(frozen=True, eq=False)
class PairMeasure:
    q: np.ndarray
    states: tuple | None = None

    def __post_init__(self):
        q = np.asarray(self.q)
        if q.dtype != object:
            q = q.astype(float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("pair measure must be a square matrix")
        object.__setattr__(self, "q", q)
        if self.states is None:
            object.__setattr__(self, "states", tuple(range(q.shape[0])))
        elif len(self.states) != q.shape[0]:
            raise ValueError("states do not match matrix size")

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def q1(self):
        return self.q.sum(axis=1)

    @property
    def q2(self):
        return self.q.sum(axis=0)

    @property
    def exact(self):
        return is_exact(self.q)

    def has_equal_marginals(self, tol=1e-12):
        d = self.q1 - self.q2
        if self.exact:
            return all(v == 0 for v in d)
        return bool(np.max(np.abs(d)) <= tol)

    def is_probability(self, tol=1e-12):
        if self.exact:
            return sum(self.q.ravel()) == 1 and all(v >= 0 for v in self.q.ravel())
        return bool(np.all(self.q >= -tol) and abs(self.q.sum() - 1.0) <= tol)

    def to_float(self):
        return PairMeasure(self.q.astype(float), self.states)

    def to_json(self):
        return json.dumps({"states": _jsonable(self.states),
                           "matrix": self.to_float().q.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.array(d["matrix"], dtype=float), _hashable(d["states"]))


@dataclass(frozen=True, eq=False)
class GridPairMeasure:
    numerators: np.ndarray
    scale: int
    states: tuple | None = None

    def __post_init__(self):
        num = np.asarray(self.numerators, dtype=object)
        if any(int(v) != v or v < 0 for v in num.ravel()):
            raise ValueError("numerators must be non-negative integers")
        num = np.vectorize(int, otypes=[object])(num)
        object.__setattr__(self, "numerators", num)
        if sum(num.ravel()) != self.scale:
            raise ValueError("numerators must sum to N")
        if np.any(num.sum(axis=1) != num.sum(axis=0)):
            raise ValueError("grid pair measure must have equal marginals")
        if self.states is None:
            object.__setattr__(self, "states", tuple(range(num.shape[0])))

    @property
    def n(self):
        return self.numerators.shape[0]

    @property
    def marginal_counts(self):
        return self.numerators.sum(axis=1)

    @property
    def q(self):
        return self.numerators.astype(float) / self.scale

    def pair_measure(self, exact=False):
        if exact:
            f = np.vectorize(lambda v: Fraction(v, self.scale), otypes=[object])
            return PairMeasure(f(self.numerators), self.states)
        return PairMeasure(self.q, self.states)

    def to_json(self):
        return json.dumps({"states": _jsonable(self.states),
                           "numerators": [[int(v) for v in row] for row in self.numerators],
                           "N": int(self.scale)})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.array(d["numerators"], dtype=object), int(d["N"]), _hashable(d["states"]))


@dataclass(frozen=True, eq=False)
class ReferenceMeasure:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("reference weights must be non-negative")
        object.__setattr__(self, "weights", w)

    @classmethod
    def counting(cls, n):
        return cls(np.ones(n))

    @classmethod
    def uniform(cls, n):
        return cls(np.full(n, 1.0 / n))


def _jsonable(states):
    return [list(s) if isinstance(s, tuple) else s for s in states]


def _hashable(states):
    return tuple(tuple(s) if isinstance(s, list) else s for s in states)


def _weights(ref, n):
    if ref is None:
        return np.ones(n)
    if isinstance(ref, ReferenceMeasure):
        return ref.weights
    return np.asarray(ref, dtype=float)


def relative_entropy(q, ref=None):
    """``H(Q | Q1 (x) ref) = sum Q(x,y) log(Q(x,y) / (Q1(x) ref(y)))``.

    ``ref=None`` means counting measure.  Returns ``inf`` on support violation.
    """
    Q = q.to_float().q if isinstance(q, PairMeasure) else np.asarray(q, dtype=float)
    m = _weights(ref, Q.shape[0])
    return _xlogy_ratio(Q, np.outer(Q.sum(axis=1), m))


def vector_relative_entropy(p, m):
    """``H(p | m)`` for vectors."""
    return _xlogy_ratio(p, np.broadcast_to(np.asarray(m, dtype=float), np.shape(p)))


def shannon_entropy(p):
    p = np.asarray(p, dtype=float)
    pos = p > 0
    return float(-np.sum(p[pos] * np.log(p[pos])))


def entropy_difference_bound(p, q):
    """Return ``(bound, actual)`` with ``bound = -alpha log(alpha/|E|)``.

    ``alpha`` is the L1 distance of the two sub-probability vectors and
    ``actual = |H(p) - H(q)|``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    alpha = float(np.abs(p - q).sum())
    if alpha > 0.5:
        raise AlphaTooLarge(f"L1 distance {alpha} exceeds 1/2")
    bound = 0.0 if alpha == 0 else -alpha * math.log(alpha / p.size)
    actual = abs(shannon_entropy(p) - shannon_entropy(q))
    if actual > bound + 1e-12:
        raise NumericalFailure(f"entropy bound violated: {actual} > {bound}")
    return bound, actual


# -- marginal construction ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarginalConstruction:
    measure: PairMeasure
    tail_mass: object
    alpha: object
    l1_distance: object
    l1_bound: object


def _product_one(q):
    return Fraction(1) if is_exact(q) else 1.0


def marginal_construction(q, box, anchor, eta=None):
    """Restrict an equal-marginal pair measure to ``box x box``.

    Rows and columns of the anchor absorb the mass that leaves the box, so the
    marginals stay equal.  If the anchor entry ends up below ``eta``, all other
    entries are scaled by ``alpha = (1 - eta) / (1 - Q_N(x0, x0))``.

    ``eta`` defaults to ``(|box| - 1)**2 / N`` only when the caller passes
    ``N`` through :func:`default_eta`; ``None`` means no rescaling.

    Returns a :class:`MarginalConstruction` carrying the L1 distance to ``q``
    (mass outside the box counted) and the bound
    ``2 * tail + 2 * (1 - alpha) * (1 - Q_N(x0, x0))``.
    """
    box = tuple(tuple(b) if isinstance(b, list) else b for b in box)
    if isinstance(anchor, list):
        anchor = tuple(anchor)
    if anchor not in box:
        raise AnchorOutsideBox(f"anchor {anchor} not in box")
    Q = q.q
    one = _product_one(Q)
    pos = {s: i for i, s in enumerate(q.states)}
    q1 = q.q1
    order = [anchor] + [b for b in box if b != anchor]
    k = len(box)
    out = np.zeros((k, k), dtype=object if q.exact else float)
    if q.exact:
        out[:] = Fraction(0)
    src = [pos.get(b) for b in order]
    # interior block (non-anchor rows and columns)
    for a in range(1, k):
        for b in range(1, k):
            if src[a] is not None and src[b] is not None:
                out[a, b] = Q[src[a], src[b]]
    for a in range(1, k):
        m = q1[src[a]] if src[a] is not None else 0 * one
        out[a, 0] = m - sum(out[a, 1:])
        out[0, a] = m - sum(out[1:, a])
    out[0, 0] = one - (sum(out.ravel()) - out[0, 0])
    anchor_mass = out[0, 0]
    alpha = one
    if eta is not None and anchor_mass < eta:
        alpha = (one - eta) / (one - anchor_mass)
        mask = np.ones((k, k), dtype=bool)
        mask[0, 0] = False
        out[mask] = out[mask] * alpha
        out[0, 0] = one - sum(out[mask])
    # back to the box order
    perm = [order.index(b) for b in box]
    out = out[np.ix_(perm, perm)]
    inside = [pos[b] for b in box if b in pos]
    tail = sum(Q.ravel()) - sum(Q[np.ix_(inside, inside)].ravel())
    l1 = tail
    for i, a in enumerate(box):
        for j, b in enumerate(box):
            qab = Q[pos[a], pos[b]] if (a in pos and b in pos) else 0 * one
            l1 += abs(out[i, j] - qab)
    bound = 2 * tail + 2 * (one - alpha) * (one - anchor_mass)
    return MarginalConstruction(PairMeasure(out, box), tail, alpha, l1, bound)


def default_eta(box_size, N):
    """The anchor-mass threshold ``(|box| - 1)**2 / N``."""
    return Fraction((box_size - 1) ** 2, N)


# -- discretization ----------------------------------------------------------

def default_anchor(q):
    """Index maximizing the diagonal entry, smallest index on ties."""
    d = np.array([float(v) for v in np.diag(q.q)])
    return int(np.flatnonzero(d == d.max())[0])


def _rational(v):
    # decimal inputs such as 0.35 are meant literally, not as their binary value
    if isinstance(v, Fraction):
        return v
    return Fraction(float(v)).limit_denominator(10 ** 12)


def discretize(q, N, anchor=None, check_box=False):
    """Floor-discretize an equal-marginal measure to a grid measure with scale ``N``.

    Interior entries (neither index the anchor) become ``floor(N q)``, the
    non-anchor marginals ``floor(N q1)``, and the anchor row and column are
    completed so that both marginals agree.  ``check_box`` enforces the size
    condition ``4 |box|**2 / N <= 1/2``.
    """
    N = int(N)
    k = q.n
    x0 = default_anchor(q) if anchor is None else int(anchor)
    if not 0 <= x0 < k:
        raise AnchorOutsideBox(f"anchor index {x0} out of range")
    if check_box and Fraction(4 * k * k, N) > Fraction(1, 2):
        raise BoxTooLargeForN(f"4|box|^2/N = {4 * k * k / N} > 1/2")
    Q = np.vectorize(_rational, otypes=[object])(q.q)
    if Q[x0, x0] < Fraction((k - 1) ** 2, N):
        raise AnchorMassTooSmall(
            f"q(x0,x0) = {float(Q[x0, x0])} < (|box|-1)^2/N = {(k - 1) ** 2 / N}")
    rows = [sum(Q[i]) for i in range(k)]
    cols = [sum(Q[:, i]) for i in range(k)]
    rest = [i for i in range(k) if i != x0]
    num = np.zeros((k, k), dtype=object)
    num[:] = 0
    for a in rest:
        for b in rest:
            num[a, b] = math.floor(Q[a, b] * N)
    for a in rest:
        m = math.floor(min(rows[a], cols[a]) * N)
        num[a, x0] = m - sum(num[a, b] for b in rest)
        num[x0, a] = m - sum(num[b, a] for b in rest)
    num[x0, x0] = N - (sum(num.ravel()) - num[x0, x0])
    if any(v < 0 for v in num.ravel()):
        raise NumericalFailure("completion produced a negative entry; marginals of q are not equal")
    return GridPairMeasure(num, N, q.states)


def l1_distance(a, b):
    A = a.q if hasattr(a, "q") else np.asarray(a)
    B = b.q if hasattr(b, "q") else np.asarray(b)
    return float(np.abs(np.asarray(A, dtype=float) - np.asarray(B, dtype=float)).sum())


# -- coordinate chart --------------------------------------------------------

def from_coordinates(x):
    """Rebuild an equal-marginal pair measure on ``E`` states from ``E**2 - E`` coordinates.

    Coordinates come in ``E - 1`` blocks of length ``E``: block ``k`` holds the
    marginal of state ``k`` followed by ``Q(k, 0..E-2)``.  The last state acts
    as the completion state.  Fractions in ``x`` give an exact result.
    Raises :class:`ConditionViolated` with ``k = 0`` for an entry outside
    ``[0, 1]`` and ``k = 1..4`` for the chart conditions.
    """
    x = list(x)
    nu = len(x)
    E = int(round((1 + math.sqrt(1 + 4 * nu)) / 2))
    if E * E - E != nu:
        raise ValueError(f"length {nu} is not of the form E^2 - E")
    exact = any(isinstance(v, Fraction) for v in x)
    conv = Fraction if exact else float
    x = [conv(v) for v in x]
    one, zero = conv(1), conv(0)
    tol = 0 if exact else 1e-12
    for i, v in enumerate(x):
        if v < zero - tol or v > one + tol:
            raise ConditionViolated(0, f"coordinate {i + 1} = {v} outside [0, 1]")
    blocks = [x[k * E:(k + 1) * E] for k in range(E - 1)]
    marg = [b[0] for b in blocks]
    inner = [b[1:] for b in blocks]
    rows = [sum(r, zero) for r in inner]
    cols = [sum((inner[j][k] for j in range(E - 1)), zero) for k in range(E - 1)]
    if sum(marg, zero) > one + tol:
        raise ConditionViolated(1, "marginals sum above 1")
    for k in range(E - 1):
        if rows[k] > marg[k] + tol:
            raise ConditionViolated(2, f"row {k + 1} exceeds its marginal")
    for k in range(E - 1):
        if cols[k] > marg[k] + tol:
            raise ConditionViolated(3, f"column {k + 1} exceeds its marginal")
    s = sum((2 * marg[k] - cols[k] for k in range(E - 1)), zero)
    if s > one + tol:
        raise ConditionViolated(4, "completion entry would be negative")
    Q = np.empty((E, E), dtype=object if exact else float)
    for j in range(E - 1):
        for k in range(E - 1):
            Q[j, k] = inner[j][k]
        Q[j, E - 1] = marg[j] - rows[j]
        Q[E - 1, j] = marg[j] - cols[j]
    Q[E - 1, E - 1] = one - s
    return PairMeasure(Q)


def to_coordinates(q):
    """Inverse of :func:`from_coordinates`."""
    Q = q.q
    E = q.n
    out = []
    for k in range(E - 1):
        out.append(sum(Q[k]) if q.exact else float(Q[k].sum()))
        out.extend(Q[k, :E - 1].tolist())
    return out


# -- permutation counting ----------------------------------------------------

def _config_counts(config, q):
    idx = {s: i for i, s in enumerate(q.states)}
    counts = [0] * q.n
    for c in config:
        c = tuple(c) if isinstance(c, list) else c
        counts[idx[c] if c in idx else int(c)] += 1
    return counts


def count_admissible_permutations(config, q):
    """Number of permutations that realize the pair counts ``N Q(x, y)``.

    For each state ``x`` the ``n_x`` positions holding ``x`` are split by
    target (multinomial) and the targets are then matched bijectively, which
    gives ``prod n_x! * prod n_x! / prod NQ(x,y)!``; zero when the empirical
    measure of ``config`` differs from the marginal.
    """
    if len(config) != q.scale:
        raise ValueError("configuration length must equal N")
    counts = _config_counts(config, q)
    if list(q.marginal_counts) != counts:
        return 0
    num = 1
    for c in counts:
        num *= math.factorial(c) ** 2
    den = 1
    for v in q.numerators.ravel():
        den *= math.factorial(int(v))
    return num // den


def log_count_stirling(q, ref=None):
    """Stirling approximation ``-H(q | q1 (x) ref)`` of the per-particle log count."""
    return -relative_entropy(q.q, ref)


def exact_log_count(q, ref=None):
    """``log`` of the ``ref``-weighted count of (configuration class, permutation) pairs.

    Equals ``sum_x NQ1(x) log ref(x) + log(prod NQ1! / prod NQ!)``; divided by N
    it tends to :func:`log_count_stirling`.
    """
    m = _weights(ref, q.n)
    counts = q.marginal_counts
    num = 1
    for c in counts:
        num *= math.factorial(int(c))
    den = 1
    for v in q.numerators.ravel():
        den *= math.factorial(int(v))
    weight = sum(int(c) * math.log(m[i]) for i, c in enumerate(counts) if c > 0)
    return weight + math.log(num) - math.log(den)
