"""Brute-force Monte Carlo for the coupled switching diffusion.

Two engines share the counter-based streams:

* the exact kernel (GBM, constant Q, no heat source) samples each leg between
  switches in one lognormal draw; with a monitoring step it fills the leg with
  a Brownian bridge conditioned on that draw, so monitored and unmonitored runs
  agree path for path when nothing exits.  It has a numba and a numpy form
  that consume draws identically.
* the event engine (numpy) advances every path from node to node of its own
  mesh (step nodes, switch times, thinning candidates).  It handles general
  coefficients (Euler), the heat-source integral and state-dependent rates.

Draw layout per path: ``STREAM_SWITCH`` as in :mod:`regime_iter.ctmc`,
``STREAM_LEG`` normal ``l`` for leg ``l``, ``STREAM_STEP`` normal ``k`` for the
k-th sub-step.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _accel
from ._accel import njit
from .errors import DomainExit, InvalidProblem, RateBoundViolated
from .model import GbmRegimeModel, GeneralModel, Interval, ProblemSpec, check_finite
from .streams import (STREAM_LEG, STREAM_STEP, STREAM_SWITCH, as_seed, normal_block, normal_from_block,
                      normal_nb, normals, seed_key, uniform_nb, uniforms)

CHUNK = 1 << 16


@dataclass(frozen=True)
class PathEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")

    def contains(self, value: float, k: float = 3.0) -> bool:
        return abs(value - self.mean) <= k * self.stderr


@dataclass(frozen=True)
class SchemeSettings:
    """``scheme`` is ``"exact"`` (lognormal legs, GBM only) or ``"euler"``.

    ``h`` is the Euler step, and for the exact scheme the monitoring step used
    by boundary problems and heat-source integrals.
    """

    scheme: str = "exact"
    h: float = 1e-3
    chunk: int = CHUNK

    def __post_init__(self):
        if self.scheme not in ("exact", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.h > 0:
            raise ValueError("step h must be positive")


EXACT = SchemeSettings()


class _Moments:
    """Streaming (count, mean, M2) with the pairwise merge rule."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, values: np.ndarray):
        nb = values.size
        if nb == 0:
            return
        mb = float(values.mean())
        m2b = float(((values - mb) ** 2).sum())
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n

    def estimate(self, seed) -> PathEstimate:
        se = math.sqrt(self.m2 / (self.n - 1) / self.n) if self.n > 1 else 0.0
        return PathEstimate(float(self.mean), se, self.n, seed)


# --- exact GBM kernel -------------------------------------------------------------

@dataclass
class _ExactOut:
    lxT: np.ndarray
    iT: np.ndarray
    logthT: np.ndarray
    count: np.ndarray
    stopped: np.ndarray
    t_stop: np.ndarray
    lx_stop: np.ndarray
    i_stop: np.ndarray
    logth_stop: np.ndarray
    exited: np.ndarray
    t_exit: np.ndarray
    x_exit: np.ndarray
    i_exit: np.ndarray
    logth_exit: np.ndarray


@njit
def _pick_dest_nb(q, i, u):
    lam = -q[i, i]
    acc = 0.0
    j = i
    for b in range(q.shape[0]):
        if b == i or q[i, b] <= 0.0:
            continue
        acc += q[i, b] / lam
        j = b
        if u < acc:
            break
    return j


@njit(nogil=True)
def _exact_nb(q, mu, sig, r, i0, t0, T, lx0, k0, k1, start, n, stop_m, loglo, loghi, lo, hi, h, n_nodes):
    lxT = np.empty(n)
    iT = np.empty(n, dtype=np.int64)
    logthT = np.empty(n)
    count = np.zeros(n, dtype=np.int64)
    stopped = np.zeros(n, dtype=np.bool_)
    t_stop = np.full(n, np.nan)
    lx_stop = np.full(n, np.nan)
    i_stop = np.full(n, -1, dtype=np.int64)
    logth_stop = np.full(n, np.nan)
    exited = np.zeros(n, dtype=np.bool_)
    t_exit = np.full(n, np.nan)
    x_exit = np.full(n, np.nan)
    i_exit = np.full(n, -1, dtype=np.int64)
    logth_exit = np.full(n, np.nan)
    for a in range(n):
        path = start + a
        s = t0
        i = i0
        lx = lx0
        logth = 0.0
        ksw = 0
        leg = 0
        stepc = 0
        node_k = 1
        out = False
        blk = normal_block(k0, k1, 2, path, 0)
        while True:
            lam = -q[i, i]
            if lam > 0.0:
                s_sw = s - math.log(uniform_nb(k0, k1, 0, path, 2 * ksw)) / lam
            else:
                s_sw = np.inf
            s_end = min(s_sw, T)
            dlt = s_end - s
            w_end = math.sqrt(dlt) * normal_nb(k0, k1, 1, path, leg)
            leg += 1
            w_prev = 0.0
            u_prev = s
            while node_k <= n_nodes:
                un = t0 + node_k * h
                if not un < s_end:
                    break
                if stepc & 1 == 0 and stepc > 0:
                    blk = normal_block(k0, k1, 2, path, stepc)
                z = normal_from_block(blk, stepc)
                stepc += 1
                frac = (un - u_prev) / (s_end - u_prev)
                sd = math.sqrt((un - u_prev) * (s_end - un) / (s_end - u_prev))
                w = w_prev + frac * (w_end - w_prev) + sd * z
                lxu = lx + mu[i] * (un - s) + sig[i] * w
                if lxu <= loglo or lxu >= loghi:
                    exited[a] = True
                    t_exit[a] = un
                    x_exit[a] = lo if lxu <= loglo else hi
                    i_exit[a] = i
                    logth_exit[a] = logth - r[i] * (un - s)
                    out = True
                    break
                w_prev = w
                u_prev = un
                node_k += 1
            if out:
                break
            lx = lx + mu[i] * dlt + sig[i] * w_end
            logth = logth - r[i] * dlt
            s = s_end
            if s_sw > T:
                break
            i = _pick_dest_nb(q, i, uniform_nb(k0, k1, 0, path, 2 * ksw + 1))
            ksw += 1
            if ksw == stop_m:
                stopped[a] = True
                t_stop[a] = s
                lx_stop[a] = lx
                i_stop[a] = i
                logth_stop[a] = logth
        lxT[a] = lx
        iT[a] = i
        logthT[a] = logth
        count[a] = ksw
    return (lxT, iT, logthT, count, stopped, t_stop, lx_stop, i_stop, logth_stop,
            exited, t_exit, x_exit, i_exit, logth_exit)


def _dest_np(q, cur, u):
    p = q.shape[0]
    lam = -q[cur, cur]
    rows = q[cur] / lam[:, None]
    elig = (np.arange(p)[None, :] != cur[:, None]) & (q[cur] > 0)
    cum = np.cumsum(np.where(elig, rows, 0.0), axis=1)
    hit = elig & (u[:, None] < cum)
    last = p - 1 - np.argmax(elig[:, ::-1], axis=1)
    return np.where(hit.any(axis=1), np.argmax(hit, axis=1), last)


def _exact_np(q, mu, sig, r, i0, t0, T, lx0, seed, start, n, stop_m, loglo, loghi, lo, hi, h, n_nodes):
    paths = np.arange(start, start + n, dtype=np.int64)
    s = np.full(n, float(t0))
    i = np.full(n, int(i0), dtype=np.int64)
    lx = np.full(n, float(lx0))
    logth = np.zeros(n)
    ksw = np.zeros(n, dtype=np.int64)
    leg = np.zeros(n, dtype=np.int64)
    stepc = np.zeros(n, dtype=np.int64)
    node_k = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    in_leg = np.zeros(n, dtype=bool)
    s_sw = np.zeros(n)
    s_end = np.zeros(n)
    w_end = np.zeros(n)
    w_prev = np.zeros(n)
    u_prev = np.zeros(n)
    res = _ExactOut(np.empty(n), np.empty(n, dtype=np.int64), np.empty(n), np.zeros(n, dtype=np.int64),
                    np.zeros(n, dtype=bool), np.full(n, np.nan), np.full(n, np.nan),
                    np.full(n, -1, dtype=np.int64), np.full(n, np.nan), np.zeros(n, dtype=bool),
                    np.full(n, np.nan), np.full(n, np.nan), np.full(n, -1, dtype=np.int64), np.full(n, np.nan))
    lam_all = -np.diag(q)
    while active.any():
        a = np.flatnonzero(active & ~in_leg)
        if a.size:
            lam = lam_all[i[a]]
            u = uniforms(seed, STREAM_SWITCH, paths[a], 2 * ksw[a])
            with np.errstate(divide="ignore"):
                s_sw[a] = np.where(lam > 0, s[a] - np.log(u) / np.where(lam > 0, lam, 1.0), np.inf)
            s_end[a] = np.minimum(s_sw[a], T)
            w_end[a] = np.sqrt(s_end[a] - s[a]) * normals(seed, STREAM_LEG, paths[a], leg[a])
            leg[a] += 1
            w_prev[a] = 0.0
            u_prev[a] = s[a]
            in_leg[a] = True
        b = np.flatnonzero(active & in_leg)
        un = t0 + node_k[b] * h
        node = (node_k[b] <= n_nodes) & (un < s_end[b])
        nb, fin = b[node], b[~node]
        if nb.size:
            un = un[node]
            z = normals(seed, STREAM_STEP, paths[nb], stepc[nb])
            stepc[nb] += 1
            up, se = u_prev[nb], s_end[nb]
            frac = (un - up) / (se - up)
            sd = np.sqrt((un - up) * (se - un) / (se - up))
            w = w_prev[nb] + frac * (w_end[nb] - w_prev[nb]) + sd * z
            ii = i[nb]
            lxu = lx[nb] + mu[ii] * (un - s[nb]) + sig[ii] * w
            ex = (lxu <= loglo) | (lxu >= loghi)
            e = nb[ex]
            res.exited[e] = True
            res.t_exit[e] = un[ex]
            res.x_exit[e] = np.where(lxu[ex] <= loglo, lo, hi)
            res.i_exit[e] = i[e]
            res.logth_exit[e] = logth[e] - r[i[e]] * (un[ex] - s[e])
            res.lxT[e] = lx[e]
            res.iT[e] = i[e]
            res.logthT[e] = logth[e]
            res.count[e] = ksw[e]
            active[e] = False
            k = nb[~ex]
            w_prev[k] = w[~ex]
            u_prev[k] = un[~ex]
            node_k[k] += 1
        if fin.size:
            ii = i[fin]
            dlt = s_end[fin] - s[fin]
            lx[fin] = lx[fin] + mu[ii] * dlt + sig[ii] * w_end[fin]
            logth[fin] = logth[fin] - r[ii] * dlt
            s[fin] = s_end[fin]
            in_leg[fin] = False
            done = fin[s_sw[fin] > T]
            res.lxT[done] = lx[done]
            res.iT[done] = i[done]
            res.logthT[done] = logth[done]
            res.count[done] = ksw[done]
            active[done] = False
            sw = fin[~(s_sw[fin] > T)]
            if sw.size:
                i[sw] = _dest_np(q, i[sw], uniforms(seed, STREAM_SWITCH, paths[sw], 2 * ksw[sw] + 1))
                ksw[sw] += 1
                st = sw[ksw[sw] == stop_m]
                res.stopped[st] = True
                res.t_stop[st] = s[st]
                res.lx_stop[st] = lx[st]
                res.i_stop[st] = i[st]
                res.logth_stop[st] = logth[st]
    return res


def _n_nodes(t0, T, h):
    if h <= 0:
        return 0
    k = int(math.ceil((T - t0) / h - 1e-9)) - 1
    return max(k, 0)


def exact_gbm_paths(model: GbmRegimeModel, t0: float, x0: float, i0: int, T: float, seed: int, start: int,
                    n: int, stop_m: int = -1, domain: Interval | None = None, h: float = 0.0) -> _ExactOut:
    """Raw per-path records of the exact kernel for paths ``start .. start+n-1``."""
    q = np.ascontiguousarray(model.Q.matrix)
    mu = model.r - model.alpha - 0.5 * model.sigma ** 2
    if domain is None:
        lo, hi, h = 0.0, np.inf, 0.0
    else:
        lo, hi = float(domain.lo), float(domain.hi)
    with np.errstate(divide="ignore"):
        loglo, loghi = float(np.log(lo)), float(np.log(hi))
    nn = _n_nodes(t0, T, h)
    args = (q, mu, model.sigma.astype(float), model.r.astype(float), int(i0), float(t0), float(T),
            float(math.log(x0)))
    tail = (int(start), int(n), int(stop_m), loglo, loghi, lo, hi, float(h), int(nn))
    if _accel.use_numba():
        k0, k1 = seed_key(seed)
        return _ExactOut(*_exact_nb(*args, np.uint64(k0), np.uint64(k1), *tail))
    return _exact_np(*args, int(seed), *tail)


# --- event engine --------------------------------------------------------------------

@dataclass
class _EventOut:
    X: np.ndarray
    i: np.ndarray
    logth: np.ndarray
    phi_int: np.ndarray
    count: np.ndarray
    stopped: np.ndarray
    t_end: np.ndarray
    exited: np.ndarray


def _event_paths(model, problem: ProblemSpec, scheme: SchemeSettings, t0, x0, i0, T, seed, start, n,
                 stop_m=-1, monitor: Interval | None = None) -> _EventOut:
    """Node-by-node simulation with per-path clocks.

    A path stops at the ``stop_m``-th switch, at the first monitored exit from
    ``monitor`` (checked at nodes before T), or at T.
    """
    gbm = isinstance(model, GbmRegimeModel)
    exact = scheme.scheme == "exact"
    if exact and not gbm:
        raise InvalidProblem("the exact scheme needs a GBM model")
    Q = model.Q
    coeffs = model.coefficients() if gbm else model.coefficients
    state_rate = (not gbm) and coeffs.rate_depends_on_state
    thinning = not Q.is_constant
    lam_star = (Q.p - 1) * Q.rate_bound if thinning else 0.0
    q_const = Q.matrix if Q.is_constant else None
    h = scheme.h
    paths = np.arange(start, start + n, dtype=np.int64)
    s = np.full(n, float(t0))
    X = np.full(n, float(x0))
    i = np.full(n, int(i0), dtype=np.int64)
    logth = np.zeros(n)
    acc = np.zeros(n)
    kc = np.zeros(n, dtype=np.int64)       # switch (or candidate) counter on STREAM_SWITCH
    ksw = np.zeros(n, dtype=np.int64)
    stepc = np.zeros(n, dtype=np.int64)
    node_k = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    stopped = np.zeros(n, dtype=bool)
    exited = np.zeros(n, dtype=bool)
    with_phi = problem.has_phi
    phi_now = problem.phi_at(s, X, i) if with_phi else None

    def next_switch(idx):
        if thinning:
            u = uniforms(seed, STREAM_SWITCH, paths[idx], 3 * kc[idx])
            return s[idx] - np.log(u) / lam_star if lam_star > 0 else np.full(idx.size, np.inf)
        lam = -q_const[i[idx], i[idx]]
        u = uniforms(seed, STREAM_SWITCH, paths[idx], 2 * kc[idx])
        with np.errstate(divide="ignore"):
            return np.where(lam > 0, s[idx] - np.log(u) / np.where(lam > 0, lam, 1.0), np.inf)

    all_idx = np.arange(n)
    nxt = next_switch(all_idx)
    while active.any():
        a = np.flatnonzero(active)
        node_t = t0 + node_k[a] * h
        s_next = np.minimum(np.minimum(node_t, nxt[a]), T)
        dlt = s_next - s[a]
        z = normals(seed, STREAM_STEP, paths[a], stepc[a])
        stepc[a] += 1
        ia, Xa = i[a], X[a]
        if exact:
            mu = model.r - model.alpha - 0.5 * model.sigma ** 2
            Xn = Xa * np.exp(mu[ia] * dlt + model.sigma[ia] * np.sqrt(dlt) * z)
        else:
            b = coeffs.eval("drift", s[a], Xa, ia)
            v = coeffs.eval("vol", s[a], Xa, ia)
            Xn = Xa + b * dlt + v * np.sqrt(dlt) * z
        if gbm:
            lt_new = logth[a] - model.r[ia] * dlt
        else:
            r0 = coeffs.eval("rate", s[a], Xa, ia)
            r1 = coeffs.eval("rate", s_next, Xn, ia)
            lt_new = logth[a] - 0.5 * (r0 + r1) * dlt
        if with_phi:
            ph1 = problem.phi_at(s_next, Xn, ia)
            acc[a] += 0.5 * (np.exp(logth[a]) * phi_now[a] + np.exp(lt_new) * ph1) * dlt
            phi_now[a] = ph1
        X[a] = Xn
        logth[a] = lt_new
        s[a] = s_next
        node_k[a] += node_t <= s_next
        if monitor is None and problem.kind == "initial_value" and np.any(Xn <= 0):
            bad = a[Xn <= 0][0]
            raise DomainExit(f"path {paths[bad]} left the half-line at t={s[bad]:g}; reduce the Euler step")
        # stop at T
        at_T = s_next >= T
        active[a[at_T]] = False
        live = a[~at_T]
        if monitor is not None and live.size:
            out = (X[live] <= monitor.lo) | (X[live] >= monitor.hi)
            e = live[out]
            exited[e] = True
            X[e] = np.where(X[e] <= monitor.lo, monitor.lo, monitor.hi)
            active[e] = False
            live = live[~out]
        # switching events
        ev = live[s[live] >= nxt[live]]
        if ev.size:
            if thinning:
                qx = Q.at(X[ev])                                  # (m, p, p)
                ie = i[ev]
                rows = qx[np.arange(ev.size), ie]
                off = np.where(np.arange(Q.p)[None, :] == ie[:, None], -np.inf, rows)
                if np.any(off > Q.rate_bound * (1 + 1e-12)):
                    raise RateBoundViolated(f"rate {off.max():g} exceeds declared bound {Q.rate_bound:g}")
                total = -rows[np.arange(ev.size), ie]
                acc_u = uniforms(seed, STREAM_SWITCH, paths[ev], 3 * kc[ev] + 1)
                take = acc_u * lam_star < total
                sw = ev[take]
                if sw.size:
                    qsw = qx[take]
                    i[sw] = _dest_rows(qsw, i[sw], uniforms(seed, STREAM_SWITCH, paths[sw], 3 * kc[sw] + 2))
                    ksw[sw] += 1
            else:
                sw = ev
                i[sw] = _dest_np(q_const, i[sw], uniforms(seed, STREAM_SWITCH, paths[sw], 2 * kc[sw] + 1))
                ksw[sw] += 1
            kc[ev] += 1
            if with_phi and sw.size:
                phi_now[sw] = problem.phi_at(s[sw], X[sw], i[sw])
            if stop_m >= 0 and sw.size:
                st = sw[ksw[sw] == stop_m]
                stopped[st] = True
                active[st] = False
            cont = ev[active[ev]]
            if cont.size:
                nxt[cont] = next_switch(cont)
    return _EventOut(X, i, logth, acc, ksw, stopped, s, exited)


def _dest_rows(qrows, cur, u):
    """Destination sampling with a per-path generator row set (m, p, p)."""
    p = qrows.shape[1]
    k = np.arange(cur.size)
    row = qrows[k, cur]
    lam = -row[k, cur]
    elig = (np.arange(p)[None, :] != cur[:, None]) & (row > 0)
    cum = np.cumsum(np.where(elig, row / lam[:, None], 0.0), axis=1)
    hit = elig & (u[:, None] < cum)
    last = p - 1 - np.argmax(elig[:, ::-1], axis=1)
    return np.where(hit.any(axis=1), np.argmax(hit, axis=1), last)


# --- estimators -------------------------------------------------------------------------

def _check_point(problem: ProblemSpec, model, t, x, i):
    p = model.p
    if not 0 <= i < p:
        raise ValueError(f"regime index {i} outside 0..{p - 1}")
    if not t <= problem.horizon:
        raise ValueError("t must not exceed the horizon")
    if not x > 0 and not isinstance(problem.domain, Interval):
        raise ValueError("x must be positive")


def _fast_ok(problem, model, settings):
    return isinstance(model, GbmRegimeModel) and settings.scheme == "exact" and not problem.has_phi


def _run(problem, model, t, x, i, n_paths, settings, seed, per_chunk: Callable, stop_m=-1, monitor=None):
    T = problem.horizon
    fast = _fast_ok(problem, model, settings)

    def chunk(start):
        n = min(settings.chunk, n_paths - start)
        if fast:
            res = exact_gbm_paths(model, t, x, i, T, seed, start, n, stop_m, monitor,
                                  settings.h if monitor is not None else 0.0)
        else:
            res = _event_paths(model, problem, settings, t, x, i, T, seed, start, n, stop_m, monitor)
        return check_finite(per_chunk(res, fast), "path value")

    starts = range(0, n_paths, settings.chunk)
    mom = _Moments()
    workers = min(_accel.threads(), len(starts))
    if workers > 1:
        # chunks own disjoint path ranges; merging in chunk order keeps the result bit-identical
        with ThreadPoolExecutor(workers) as pool:
            for vals in pool.map(chunk, starts):
                mom.add(vals)
    else:
        for start in starts:
            mom.add(chunk(start))
    return mom.estimate(seed)


def _terminal_value(problem, res, fast):
    if fast:
        return np.exp(res.logthT) * problem.g(np.exp(res.lxT), res.iT)
    return np.exp(res.logth) * problem.g(res.X, res.i) - res.phi_int


def estimate_v(problem: ProblemSpec, model, t: float, x: float, i: int, n_paths: int,
               settings: SchemeSettings = EXACT, rng=0) -> PathEstimate:
    """Plain Monte Carlo of the discounted payoff minus the heat-source integral."""
    seed = as_seed(rng)
    _check_point(problem, model, t, x, i)
    if t == problem.horizon:
        return PathEstimate(float(problem.g(np.array([x]), np.array([i]))[0]), 0.0, n_paths, seed)
    return _run(problem, model, t, x, i, n_paths, settings, seed,
                lambda res, fast: _terminal_value(problem, res, fast))


def estimate_w_restricted(m: int, problem: ProblemSpec, model, t: float, x: float, i: int, n_paths: int,
                          settings: SchemeSettings = EXACT, rng=0, w0_eval: Callable = None) -> PathEstimate:
    """Dynamics stopped at the m-th switch (or T); ``w0_eval(t, x, i)`` is paid at the stop.

    ``w0_eval`` takes arrays of times, states and regimes.
    """
    seed = as_seed(rng)
    _check_point(problem, model, t, x, i)
    if w0_eval is None:
        raise ValueError("estimate_w_restricted needs a w0 evaluator")
    if m == 0:
        val = float(np.asarray(w0_eval(np.array([t]), np.array([x]), np.array([i]))).ravel()[0])
        return PathEstimate(val, 0.0, n_paths, seed)
    if t == problem.horizon:
        return PathEstimate(float(problem.g(np.array([x]), np.array([i]))[0]), 0.0, n_paths, seed)

    def value(res, fast):
        out = _terminal_value(problem, res, fast)
        st = res.stopped
        if st.any():
            if fast:
                ts, xs, js, lt, ph = res.t_stop[st], np.exp(res.lx_stop[st]), res.i_stop[st], res.logth_stop[st], 0.0
            else:
                ts, xs, js, lt, ph = res.t_end[st], res.X[st], res.i[st], res.logth[st], res.phi_int[st]
            out[st] = np.exp(lt) * np.asarray(w0_eval(ts, xs, js), dtype=float) - ph
        return out

    return _run(problem, model, t, x, i, n_paths, settings, seed, value, stop_m=m)


def estimate_u_restricted(m: int, problem: ProblemSpec, model, t: float, x: float, i: int, n_paths: int,
                          settings: SchemeSettings = EXACT, rng=0) -> PathEstimate:
    """Payoff paid only on paths with at most m switches; heat source integrated to the (m+1)-th."""
    seed = as_seed(rng)
    _check_point(problem, model, t, x, i)
    if m < 0:
        raise ValueError("m must be nonnegative")
    if t == problem.horizon:
        return PathEstimate(float(problem.g(np.array([x]), np.array([i]))[0]), 0.0, n_paths, seed)

    def value(res, fast):
        out = _terminal_value(problem, res, fast)
        if fast:
            return np.where(res.count <= m, out, 0.0)
        return np.where(res.stopped, -res.phi_int, out)

    return _run(problem, model, t, x, i, n_paths, settings, seed, value,
                stop_m=-1 if _fast_ok(problem, model, settings) else m + 1)


def estimate_v_boundary(problem: ProblemSpec, model, t: float, x: float, i: int, n_paths: int,
                        settings: SchemeSettings = EXACT, rng=0) -> PathEstimate:
    """Exit-time representation on a bounded interval with discrete monitoring every ``settings.h``.

    The first monitored node outside the interval pays psi at the nearest
    endpoint; a path that survives every node before T pays g at T.
    """
    seed = as_seed(rng)
    if problem.kind != "initial_boundary":
        raise InvalidProblem("estimate_v_boundary needs an initial-boundary problem")
    dom = problem.domain
    T = problem.horizon
    if x <= dom.lo or x >= dom.hi:
        if x < dom.lo or x > dom.hi:
            raise ValueError(f"x={x} lies outside the domain")
        val = float(np.asarray(problem.psi_at(np.array([t]), np.array([x]), np.array([i]))).ravel()[0])
        return PathEstimate(val, 0.0, n_paths, seed)
    _check_point(problem, model, t, x, i)
    if t == T:
        return PathEstimate(float(problem.g(np.array([x]), np.array([i]))[0]), 0.0, n_paths, seed)

    def value(res, fast):
        out = _terminal_value(problem, res, fast)
        ex = res.exited
        if ex.any():
            if fast:
                te, xe, ie, lt, ph = res.t_exit[ex], res.x_exit[ex], res.i_exit[ex], res.logth_exit[ex], 0.0
            else:
                te, xe, ie, lt, ph = res.t_end[ex], res.X[ex], res.i[ex], res.logth[ex], res.phi_int[ex]
            out[ex] = np.exp(lt) * problem.psi_at(te, xe, ie) - ph
        return out

    return _run(problem, model, t, x, i, n_paths, settings, seed, value, monitor=dom)
