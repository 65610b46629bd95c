"""Switching times of the regime chain.

Draw layout on ``STREAM_SWITCH`` for the exact (constant-rate) sampler: event
``k`` uses uniform ``2k`` for the holding time and ``2k + 1`` for the
destination.  The thinning sampler uses ``3k`` (gap), ``3k + 1`` (accept) and
``3k + 2`` (destination) for candidate ``k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from . import _accel
from ._accel import njit
from .errors import RateBoundViolated
from .model import GeneratorMatrix
from .streams import STREAM_SWITCH, PathStream, seed_key, uniform_nb, uniforms


@dataclass(frozen=True)
class SwitchPath:
    t0: float
    i0: int
    T: float
    times: tuple[float, ...] = ()
    regimes: tuple[int, ...] = ()   # regime entered at each switch

    def __post_init__(self):
        if len(self.times) != len(self.regimes):
            raise ValueError("times and regimes must have equal length")
        prev_t, prev_i = self.t0, self.i0
        for s, j in zip(self.times, self.regimes):
            if not (prev_t < s <= self.T):
                raise ValueError(f"switch time {s} out of order or outside ({self.t0}, {self.T}]")
            if j == prev_i:
                raise ValueError("consecutive regimes must differ")
            prev_t, prev_i = s, j

    @property
    def n_switches(self) -> int:
        return len(self.times)

    def regime_at(self, s: float) -> int:
        i = self.i0
        for tk, j in zip(self.times, self.regimes):
            if tk <= s:
                i = j
        return i


def _pick_destination(row: np.ndarray, i: int, u: float) -> int:
    total = -row[i]
    acc = 0.0
    last = i
    for j in range(row.size):
        if j == i or row[j] <= 0:
            continue
        acc += row[j] / total
        last = j
        if u < acc:
            return j
    return last


def sample_switch_path(Q: GeneratorMatrix, i0: int, t0: float, T: float, rng) -> SwitchPath:
    """One path of the chain on ``(t0, T]`` with exponential holding times.

    ``rng`` is a :class:`PathStream` or a ``(seed, path_index)`` pair.
    """
    if not Q.is_constant:
        raise TypeError("sample_switch_path needs a constant generator; use sample_switch_path_thinning")
    if not t0 < T:
        raise ValueError("need t0 < T")
    stream = rng if isinstance(rng, PathStream) else PathStream(*rng)
    q = Q.matrix
    s, i = t0, int(i0)
    times, regs = [], []
    k = 0
    while True:
        lam = -q[i, i]
        if lam <= 0:
            break
        s = s - math.log(stream.at(STREAM_SWITCH, 2 * k)) / lam
        if s > T:
            break
        j = _pick_destination(q[i], i, stream.at(STREAM_SWITCH, 2 * k + 1))
        times.append(s)
        regs.append(j)
        i = j
        k += 1
    return SwitchPath(t0, int(i0), T, tuple(times), tuple(regs))


@dataclass(frozen=True)
class SwitchPathBatch:
    """Paths ``start .. start + n - 1`` of one seed; times padded with NaN."""

    t0: float
    i0: int
    T: float
    counts: np.ndarray
    times: np.ndarray
    regimes: np.ndarray

    def path(self, k: int) -> SwitchPath:
        c = int(self.counts[k])
        return SwitchPath(self.t0, self.i0, self.T, tuple(float(v) for v in self.times[k, :c]),
                          tuple(int(v) for v in self.regimes[k, :c]))


@njit
def _batch_nb(q, i0, t0, T, k0, k1, start, n, kmax):
    p = q.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    times = np.full((n, kmax), np.nan)
    regs = np.full((n, kmax), -1, dtype=np.int64)
    for a in range(n):
        path = start + a
        s = t0
        i = i0
        k = 0
        while True:
            lam = -q[i, i]
            if lam <= 0.0:
                break
            s = s - math.log(uniform_nb(k0, k1, 0, path, 2 * k)) / lam
            if s > T:
                break
            u = uniform_nb(k0, k1, 0, path, 2 * k + 1)
            acc = 0.0
            j = i
            for b in range(p):
                if b == i or q[i, b] <= 0.0:
                    continue
                acc += q[i, b] / lam
                j = b
                if u < acc:
                    break
            if k < kmax:
                times[a, k] = s
                regs[a, k] = j
            i = j
            k += 1
        counts[a] = k
    return counts, times, regs


def _batch_np(q, i0, t0, T, seed, start, n, kmax):
    p = q.shape[0]
    paths = np.arange(start, start + n, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    times = np.full((n, kmax), np.nan)
    regs = np.full((n, kmax), -1, dtype=np.int64)
    s = np.full(n, float(t0))
    cur = np.full(n, int(i0), dtype=np.int64)
    active = np.ones(n, dtype=bool)
    k = 0
    lam_all = -np.diag(q)
    cum = np.zeros((p, p))
    for i in range(p):
        acc = 0.0
        for b in range(p):
            if b != i and q[i, b] > 0 and lam_all[i] > 0:
                acc += q[i, b] / lam_all[i]
            cum[i, b] = acc if (b != i and q[i, b] > 0) else np.nan
    while active.any():
        idx = np.flatnonzero(active)
        lam = lam_all[cur[idx]]
        absorbed = lam <= 0
        u = uniforms(seed, STREAM_SWITCH, paths[idx], 2 * k)
        with np.errstate(divide="ignore"):
            snew = s[idx] - np.log(u) / np.where(absorbed, 1.0, lam)
        done = absorbed | (snew > T)
        active[idx[done]] = False
        go = idx[~done]
        if go.size == 0:
            break
        s[go] = snew[~done]
        ud = uniforms(seed, STREAM_SWITCH, paths[go], 2 * k + 1)
        rows = cum[cur[go]]
        # first eligible destination whose cumulative probability exceeds u
        hit = np.where(np.isnan(rows), False, ud[:, None] < rows)
        last = p - 1 - np.argmax(~np.isnan(rows[:, ::-1]), axis=1)
        dest = np.where(hit.any(axis=1), np.argmax(hit, axis=1), last)
        if k < kmax:
            times[go, k] = s[go]
            regs[go, k] = dest
        cur[go] = dest
        counts[go] += 1
        k += 1
    return counts, times, regs


def sample_switch_paths(Q: GeneratorMatrix, i0: int, t0: float, T: float, n: int, seed: int,
                        start: int = 0, kmax: int = 64) -> SwitchPathBatch:
    """Vectorised :func:`sample_switch_path` for paths ``start .. start+n-1``.

    Path ``k`` of the batch equals ``sample_switch_path(Q, i0, t0, T, (seed, start + k))``.
    Only the first ``kmax`` events are stored; ``counts`` is always exact.
    """
    if not Q.is_constant:
        raise TypeError("batch sampling needs a constant generator")
    q = np.ascontiguousarray(Q.matrix)
    if _accel.use_numba():
        k0, k1 = seed_key(seed)
        c, tm, rg = _batch_nb(q, int(i0), float(t0), float(T), np.uint64(k0), np.uint64(k1),
                              int(start), int(n), int(kmax))
    else:
        c, tm, rg = _batch_np(q, int(i0), float(t0), float(T), int(seed), int(start), int(n), int(kmax))
    return SwitchPathBatch(float(t0), int(i0), float(T), c, tm, rg)


def sample_switch_path_thinning(Q: GeneratorMatrix, path_state: Callable[[float], float], i0: int,
                                t0: float, T: float, rng) -> SwitchPath:
    """Switch path for state-dependent rates along a given state trajectory ``x(t)``.

    Candidates arrive at the dominating rate ``(p - 1) * Q.rate_bound`` and are
    accepted with probability ``-q_ii(x(tau)) / dominating rate``.
    """
    stream = rng if isinstance(rng, PathStream) else PathStream(*rng)
    p = Q.p
    lam_star = (p - 1) * Q.rate_bound
    s, i = float(t0), int(i0)
    times, regs = [], []
    if lam_star <= 0:
        return SwitchPath(t0, int(i0), T)
    k = 0
    while True:
        s = s - math.log(stream.at(STREAM_SWITCH, 3 * k)) / lam_star
        if s > T:
            break
        x = float(path_state(s))
        q = Q.at(x)
        off = np.delete(q[i], i)
        if np.any(off > Q.rate_bound * (1 + 1e-12)):
            raise RateBoundViolated(f"rate {off.max():g} exceeds bound {Q.rate_bound:g} at t={s:g}, x={x:g}")
        total = -q[i, i]
        if stream.at(STREAM_SWITCH, 3 * k + 1) * lam_star < total:
            j = _pick_destination(q[i], i, stream.at(STREAM_SWITCH, 3 * k + 2))
            times.append(s)
            regs.append(j)
            i = j
        k += 1
    return SwitchPath(t0, int(i0), T, tuple(times), tuple(regs))


def switch_tail_probability(c: float, delta: float, m: int) -> float:
    """Poisson partial sum  sum_{k<m} e^{-c delta} (c delta)^k / k!.

    Equals P(fewer than m switches on an interval of length ``delta``) when the
    total switching rate is ``c``; with ``c`` the supremum rate it bounds the
    chance that the m-th switch falls after the horizon.
    """
    if c < 0 or delta < 0 or m < 0:
        raise ValueError("c, delta and m must be nonnegative")
    if m == 0:
        return 0.0
    return float(special.pdtr(m - 1, c * delta))


def sample_forced_switches(Q: GeneratorMatrix, i0: int, t0: float, T: float, m: int,
                           time_u: np.ndarray, dest_u: np.ndarray | None = None,
                           sequence: tuple[int, ...] | None = None):
    """First ``m`` switches conditioned to occur before ``T``, with likelihood weights.

    Each switch time is drawn from the holding-time law truncated to the
    remaining horizon, and the path weight carries the probability mass that
    was conditioned away, so ``E[weight * h(path)] = E[1(tau_m <= T) h(path)]``.
    Destinations come from ``dest_u`` (sampled) or are fixed by ``sequence``
    (enumerated; the weight then includes the jump probabilities).

    Returns ``(times (n, m), regimes (n, m + 1), weights (n,))``.
    """
    q = Q.matrix
    p = Q.p
    time_u = np.asarray(time_u, dtype=float)
    n = time_u.shape[0]
    times = np.empty((n, m))
    regimes = np.empty((n, m + 1), dtype=np.int64)
    regimes[:, 0] = i0
    weights = np.ones(n)
    s = np.full(n, float(t0))
    lam_all = -np.diag(q)
    for k in range(m):
        cur = regimes[:, k]
        lam = lam_all[cur]
        live = lam > 0
        safe = np.where(live, lam, 1.0)
        mass = np.where(live, -np.expm1(-safe * (T - s)), 0.0)
        weights *= mass
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(mass > 0, -np.log1p(-time_u[:, k] * mass) / safe, 0.0)
        s = np.minimum(s + step, T)
        times[:, k] = s
        if sequence is not None:
            nxt = int(sequence[k + 1])
            weights *= np.where(live, q[cur, nxt] / safe, 0.0)
            regimes[:, k + 1] = nxt
        else:
            cum = np.cumsum(np.where(np.arange(p)[None, :] == cur[:, None], 0.0, q[cur] / safe[:, None]), axis=1)
            u = dest_u[:, k]
            dest = np.argmax(u[:, None] < cum, axis=1)
            dest = np.where(dest == cur, (cur + 1) % p, dest)
            regimes[:, k + 1] = dest
    return times, regimes, weights
