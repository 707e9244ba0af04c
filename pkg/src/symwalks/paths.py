"""Exact sampling of jump paths and endpoint-conditioned bridges.

All samplers use uniformization: with ``lam`` bounding every exit rate, the
step matrix ``R = I + L / lam`` drives a discrete chain whose steps occur at
the points of a rate-``lam`` Poisson process.  Steps that do not change the
state are virtual and are dropped from stored paths.  States are handled as
integer indices into the generator.

Random numbers come from numpy's Philox counter-based generator.  A stream is
the pair ``(seed, stream_id)`` packed into the 128-bit Philox key, so distinct
stream ids give independent, reproducible sequences regardless of scheduling.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EndpointMismatch, UnreachableEndpoint

POISSON_TAIL = 1e-12
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self):
        key = (int(self.seed) & _MASK64) | ((int(self.stream_id) & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index):
        """Deterministic sub-stream for replica ``index``."""
        return RngStream(self.seed, (int(self.stream_id) * 1_000_003 + 1 + int(index)) & _MASK64)


def _rng(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


@dataclass(frozen=True, eq=False)
class JumpPath:
    start: int
    horizon: float
    jump_times: np.ndarray
    jump_targets: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        s = np.asarray(self.jump_targets, dtype=int)
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "jump_targets", s)
        if t.shape != s.shape:
            raise ValueError("jump_times and jump_targets differ in length")
        if t.size:
            if np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] >= self.horizon:
                raise ValueError("jump times must be strictly increasing in (0, horizon)")
            prev = np.concatenate(([self.start], s[:-1]))
            if np.any(prev == s):
                raise ValueError("consecutive states must differ")

    @property
    def n_jumps(self):
        return int(self.jump_times.size)

    @property
    def states(self):
        """Visited states, starting state first."""
        return np.concatenate(([self.start], self.jump_targets)).astype(int)

    @property
    def end(self):
        return int(self.jump_targets[-1]) if self.n_jumps else int(self.start)

    def holding_times(self):
        return np.diff(np.concatenate(([0.0], self.jump_times, [self.horizon])))

    def state_at(self, t):
        """Right-continuous evaluation at time(s) ``t``."""
        k = np.searchsorted(self.jump_times, t, side="right")
        return self.states[k]

    def integral(self, f):
        """``int_0^horizon f(xi_s) ds`` for a vector ``f`` over states."""
        f = np.asarray(f, dtype=float)
        return float(self.holding_times() @ f[self.states])


@dataclass(frozen=True, eq=False)
class LocalTime:
    weights: np.ndarray


def resolve_state(g, x):
    """Index of a state given either its label or its index."""
    if isinstance(x, list):
        x = tuple(x)
    if g.space is not None and x in g.space:
        return g.space.index(x)
    x = int(x)
    if not 0 <= x < g.n:
        raise ValueError(f"state {x} out of range")
    return x


def uniformization(g):
    """Return ``(lam, R)`` with ``R = I + L / lam`` entrywise non-negative."""
    lam = g.max_exit_rate
    if lam <= 0:
        return 0.0, np.eye(g.n)
    R = np.eye(g.n) + g.L / lam
    return lam, np.clip(R, 0.0, None)


def _poisson_cutoff(mean):
    m = int(stats.poisson.ppf(1 - POISSON_TAIL, mean)) if mean > 0 else 0
    return max(m, 1)


def _categorical(gen, probs):
    """One draw per row of an unnormalised probability matrix."""
    c = np.cumsum(probs, axis=1)
    u = gen.random(probs.shape[0]) * c[:, -1]
    idx = (c < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Padded uniformized paths; virtual steps are kept (states may repeat).

    ``times[b, :counts[b]]`` are sorted step times and ``states[b, k]`` the state
    after step ``k``.
    """

    start: np.ndarray
    horizon: float
    counts: np.ndarray
    times: np.ndarray
    states: np.ndarray

    @property
    def size(self):
        return self.start.size

    def end(self):
        B = self.size
        out = self.start.copy()
        has = self.counts > 0
        out[has] = self.states[np.arange(B)[has], self.counts[has] - 1]
        return out

    def _segments(self):
        B, M = self.times.shape
        k = np.arange(M)[None, :]
        valid = k < self.counts[:, None]
        t = np.where(valid, self.times, self.horizon)
        bounds = np.concatenate((np.zeros((B, 1)), t, np.full((B, 1), self.horizon)), axis=1)
        dur = np.diff(bounds, axis=1)
        st = np.concatenate((self.start[:, None], np.where(valid, self.states, 0)), axis=1)
        return dur, st

    def local_times(self, n):
        dur, st = self._segments()
        B = self.size
        flat = (np.arange(B)[:, None] * n + st).ravel()
        lt = np.bincount(flat, weights=dur.ravel(), minlength=B * n).reshape(B, n)
        return lt / self.horizon

    def integrals(self, f):
        dur, st = self._segments()
        return (dur * np.asarray(f, dtype=float)[st]).sum(axis=1)

    def state_at(self, t):
        B, M = self.times.shape
        valid = np.arange(M)[None, :] < self.counts[:, None]
        k = ((self.times <= t) & valid).sum(axis=1)
        st = np.concatenate((self.start[:, None], self.states), axis=1)
        return st[np.arange(B), k]

    def real_jump_counts(self):
        B, M = self.times.shape
        valid = np.arange(M)[None, :] < self.counts[:, None]
        prev = np.concatenate((self.start[:, None], self.states[:, :-1]), axis=1)
        return ((prev != self.states) & valid).sum(axis=1)

    def path(self, b):
        m = int(self.counts[b])
        t = self.times[b, :m]
        s = self.states[b, :m]
        prev = np.concatenate(([self.start[b]], s[:-1]))
        keep = prev != s
        return JumpPath(int(self.start[b]), self.horizon, t[keep], s[keep])

    def paths(self):
        return [self.path(b) for b in range(self.size)]


def _step_times(gen, counts, beta):
    M = int(counts.max()) if counts.size else 0
    u = gen.random((counts.size, M)) * beta
    valid = np.arange(M)[None, :] < counts[:, None]
    u = np.where(valid, u, np.inf)
    return np.sort(u, axis=1)


def sample_paths(g, x, beta, rng, size):
    """``size`` independent forward paths from ``x`` (a state label, an index or an index array)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not g.is_conservative:
        raise ValueError("forward sampling needs a conservative generator")
    gen = _rng(rng)
    label = tuple(x) if isinstance(x, list) else x
    if np.ndim(x) == 0 or (g.space is not None and label in g.space):
        start = np.full(size, resolve_state(g, x), dtype=int)
    else:
        start = np.broadcast_to(np.array([resolve_state(g, v) for v in x]), (size,)).astype(int)
    lam, R = uniformization(g)
    counts = gen.poisson(lam * beta, size) if lam > 0 else np.zeros(size, dtype=int)
    times = _step_times(gen, counts, beta)
    M = times.shape[1]
    states = np.zeros((size, M), dtype=int)
    cur = start.copy()
    for k in range(M):
        active = counts > k
        if not active.any():
            break
        cur[active] = _categorical(gen, R[cur[active]])
        states[:, k] = np.where(active, cur, 0)
    return PathBatch(start, float(beta), counts, times, states)


def sample_path(g, x, beta, rng):
    """One exact path of the chain with rates ``L`` started at ``x``."""
    return sample_paths(g, x, beta, rng, 1).path(0)


class BridgeSampler:
    """Precomputed uniformized bridge law for a fixed generator and horizon.

    Works for any Metzler ``L`` (tilted or killed generators included): the
    step matrix is then sub-stochastic and the bridge law absorbs the defect.
    """

    def __init__(self, g, beta):
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.n = g.n
        self.beta = float(beta)
        self.lam, self.R = uniformization(g)
        self.mean = self.lam * self.beta
        self.M = _poisson_cutoff(self.mean) if self.mean > 0 else 0
        self._lock = threading.Lock()
        self._weights = {}
        self._extend(self.M)

    def _extend(self, M):
        # P[m] = R^m, m = 0..M
        P = np.empty((M + 1, self.n, self.n))
        P[0] = np.eye(self.n)
        for m in range(1, M + 1):
            P[m] = P[m - 1] @ self.R
        self.P = P

    def _count_weights(self, x, y):
        """Law of the number of uniformized steps given the endpoints.

        The truncation point depends only on ``(x, y)``, never on which other
        pairs were sampled first, so draws are reproducible across threads.
        """
        key = (x, y)
        with self._lock:
            if key in self._weights:
                return self._weights[key]
            M, mean = self.M, self.mean
            while True:
                if self.P.shape[0] <= M:
                    self._extend(M)
                pois = stats.poisson.pmf(np.arange(M + 1), mean) if mean > 0 else \
                    np.concatenate(([1.0], np.zeros(M)))
                w = pois * self.P[:M + 1, x, y]
                total = w.sum()
                tail = stats.poisson.sf(M, mean) if mean > 0 else 0.0
                if total <= 0 and tail < 1e-300:
                    raise UnreachableEndpoint(f"no path from state {x} to state {y}")
                if tail <= POISSON_TAIL * max(total, 1e-300) or M > 20 * (mean + 10):
                    if total <= 0:
                        raise UnreachableEndpoint(f"no path from state {x} to state {y}")
                    self._weights[key] = w / total
                    return self._weights[key]
                M = 2 * M + 1

    def sample(self, x, y, rng, size):
        gen = _rng(rng)
        w = self._count_weights(x, y)
        counts = gen.choice(w.size, size=size, p=w)
        times = _step_times(gen, counts, self.beta)
        M = times.shape[1]
        states = np.zeros((size, M), dtype=int)
        cur = np.full(size, x, dtype=int)
        col = self.P[:w.size, :, y]
        for k in range(M):
            active = counts > k
            if not active.any():
                break
            rem = counts[active] - k - 1
            probs = self.R[cur[active]] * col[rem]
            cur[active] = _categorical(gen, probs)
            states[:, k] = np.where(active, cur, 0)
        return PathBatch(np.full(size, x, dtype=int), self.beta, counts, times, states)


def sample_bridges(g, x, y, beta, rng, size):
    x, y = resolve_state(g, x), resolve_state(g, y)
    return BridgeSampler(g, beta).sample(x, y, rng, size)


def sample_bridge(g, x, y, beta, rng):
    """One path of the chain conditioned on ``xi_0 = x`` and ``xi_beta = y``."""
    return sample_bridges(g, x, y, beta, rng, 1).path(0)


def occupation_local_time(path, n=None):
    """Fraction of ``[0, horizon]`` spent at each state."""
    if n is None:
        n = int(path.states.max()) + 1
    w = np.bincount(path.states, weights=path.holding_times(), minlength=n)
    return LocalTime(w / path.horizon)


def concatenate_cycle(paths):
    """Join bridges whose endpoints chain around a cycle into one long bridge."""
    if not paths:
        raise ValueError("empty cycle")
    k = len(paths)
    for i, p in enumerate(paths):
        nxt = paths[(i + 1) % k]
        if p.end != nxt.start:
            raise EndpointMismatch(f"piece {i} ends at {p.end}, piece {(i + 1) % k} starts at {nxt.start}")
    offset = 0.0
    times, targets = [], []
    for p in paths:
        times.append(p.jump_times + offset)
        targets.append(p.jump_targets)
        offset += p.horizon
    return JumpPath(paths[0].start, offset, np.concatenate(times), np.concatenate(targets))


def write_paths_csv(fh, replicas):
    """Dump paths as rows ``replica, piece, t_jump, state``.

    ``replicas`` is a sequence whose items are lists of pieces; the initial
    state of each piece is written with ``t_jump = 0``.
    """
    w = csv.writer(fh)
    w.writerow(["replica", "piece", "t_jump", "state"])
    for r, pieces in enumerate(replicas):
        for j, p in enumerate(pieces):
            w.writerow([r, j, 0.0, p.start])
            for t, s in zip(p.jump_times, p.jump_targets):
                w.writerow([r, j, repr(float(t)), int(s)])
