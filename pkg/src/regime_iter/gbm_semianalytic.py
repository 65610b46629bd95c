"""Semi-analytic iterates for regime-switching geometric Brownian motion.

Conditional on the switching times, log X_T is Gaussian with duration-weighted
("blended") drift and variance, so every iterate is a mixture of one-regime
lognormal expectations V(x, r, sigma, tau, alpha).  Levels 0..2 use tensor
Gauss-Legendre rules over the switch times; deeper levels sample the switch
times (scrambled Sobol or Philox streams) and keep the inner expectation exact.

Regimes are 0-based.  Every function takes the horizon ``T`` explicitly unless
``g`` is a :class:`~regime_iter.model.ProblemSpec`, which carries it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.interpolate import BarycentricInterpolator
from scipy.stats import qmc

from . import _accel
from ._accel import njit
from .ctmc import sample_forced_switches
from .model import CallPayoff, GbmRegimeModel, ProblemSpec, as_payoff, check_finite
from .streams import STREAM_SWITCH, uniforms

_Z_HALF_WIDTH = 12.0
_MAX_ENUMERATED = 64
_CHUNK_ELEMS = 4_000_000
_S2_NODES = 32          # Chebyshev nodes in sigma^2 for collapsed call mixtures
_S2_MIN_COMPONENTS = 256


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts and sampling controls.

    ``sampling`` is ``"rqmc"`` (scrambled Sobol, ``replicates`` independent
    scrambles give the standard error) or ``"mc"`` (Philox streams, split into
    ``replicates`` batches).
    """

    hermite_nodes: int = 64
    legendre_nodes: int = 48
    path_samples: int = 100_000
    sampling: str = "rqmc"
    replicates: int = 16

    def __post_init__(self):
        for name in ("hermite_nodes", "legendre_nodes", "path_samples", "replicates"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be at least 2")
        if self.sampling not in ("rqmc", "mc"):
            raise ValueError(f"sampling must be 'rqmc' or 'mc', got {self.sampling!r}")

    def per_replicate(self) -> int:
        n = max(2, -(-self.path_samples // self.replicates))
        if self.sampling == "rqmc":
            n = 1 << (n - 1).bit_length()
        return n


DEFAULT_QUAD = QuadratureSpec()


@dataclass(frozen=True)
class BlendedParams:
    """Duration-weighted r, sigma^2 and alpha over the legs of a switch path."""

    r: float
    sigma2: float
    alpha: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @classmethod
    def from_legs(cls, model: GbmRegimeModel, regimes, durations) -> "BlendedParams":
        d = np.asarray(durations, dtype=float)
        reg = np.asarray(regimes, dtype=int)
        tot = d.sum()
        if tot <= 0:
            i = int(reg[0])
            return cls(float(model.r[i]), float(model.sigma[i] ** 2), float(model.alpha[i]))
        return cls(float(model.r[reg] @ d / tot), float((model.sigma[reg] ** 2) @ d / tot),
                   float(model.alpha[reg] @ d / tot))


def _resolve(g, T):
    if isinstance(g, ProblemSpec):
        return g.payoff, float(g.horizon)
    if T is None:
        raise TypeError("the horizon T is required when g is a bare payoff")
    return as_payoff(g), float(T)


# --- one-regime lognormal expectation ------------------------------------------

def call_closed_form(x, r, sigma, t, alpha, K):
    """x e^{-alpha t} Phi(d1) - K e^{-r t} Phi(d2)  (vectorised)."""
    x, r, sigma, t, alpha = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, r, sigma, t, alpha)))
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = sigma * np.sqrt(t)
        d1 = (np.log(x / K) + (r - alpha + 0.5 * sigma ** 2) * t) / sq
        d2 = d1 - sq
        out = x * np.exp(-alpha * t) * special.ndtr(d1) - K * np.exp(-r * t) * special.ndtr(d2)
    zero_t = t <= 0
    if np.any(zero_t):
        out = np.where(zero_t, np.maximum(x - K, 0.0), out)
    return out[()] if out.ndim == 0 else out


def _z_nodes(quad: QuadratureSpec, kinks, x, mu, sd):
    """Abscissae (..., n) and weights (..., n) for E[h(Z)], Z standard normal."""
    if not kinks:
        y, w = np.polynomial.hermite.hermgauss(quad.hermite_nodes)
        shape = np.broadcast(x, mu, sd).shape
        z = np.broadcast_to(np.sqrt(2.0) * y, shape + y.shape)
        return z, np.broadcast_to(w / np.sqrt(np.pi), shape + y.shape)
    # split the real line at the kinks so each piece is smooth
    gl, gw = np.polynomial.legendre.leggauss(quad.hermite_nodes)
    lo = -_Z_HALF_WIDTH
    hi = _Z_HALF_WIDTH + np.maximum(sd, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cuts = [np.clip((np.log(k / x) - mu) / sd, lo, hi) for k in sorted(kinks) if k > 0]
    edges = np.stack(np.broadcast_arrays(lo, *cuts, hi), axis=-1)
    edges = np.sort(edges, axis=-1)
    a, b = edges[..., :-1, None], edges[..., 1:, None]
    half = 0.5 * (b - a)
    z = a + half * (gl + 1.0)
    w = half * gw * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return z.reshape(z.shape[:-2] + (-1,)), w.reshape(w.shape[:-2] + (-1,))


def value_V(x, r, sigma, t, alpha, g, quad: QuadratureSpec = DEFAULT_QUAD, regime: int = 0):
    """e^{-r t} E[g(x exp((r - alpha - sigma^2/2) t + sigma sqrt(t) Z))].

    Smooth payoffs use Gauss-Hermite with ``quad.hermite_nodes`` nodes.  A
    payoff that declares kinks is integrated piecewise (Gauss-Legendre on each
    smooth piece of a truncated z-line), which keeps spectral accuracy.
    """
    g = as_payoff(g)
    x, r, sigma, t, alpha = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, r, sigma, t, alpha)))
    if np.any(sigma <= 0) or np.any(t < 0) or np.any(x <= 0):
        raise ValueError("value_V needs sigma > 0, t >= 0 and x > 0")
    out = np.empty(x.shape)
    zero = t == 0
    if np.any(zero):
        out[zero] = check_finite(g(x[zero], regime), "payoff", x=x[zero])
    live = ~zero
    if np.any(live):
        xs, rs, ss, ts, al = x[live], r[live], sigma[live], t[live], alpha[live]
        mu = (rs - al - 0.5 * ss ** 2) * ts
        sd = ss * np.sqrt(ts)
        z, w = _z_nodes(quad, getattr(g, "kinks", ()), xs, mu, sd)
        xT = xs[:, None] * np.exp(mu[:, None] + sd[:, None] * z)
        vals = check_finite(g(xT, regime), "payoff", x=xT)
        out[live] = np.exp(-rs * ts) * np.sum(w * vals, axis=-1)
    return out[()] if out.ndim == 0 else out


# --- mixture kernel ---------------------------------------------------------------

@njit
def _call_mix_nb(logx, x, weights, group, rb, s2, ab, tau, K, n_groups):
    nk = weights.shape[0]
    nx = x.size
    out = np.zeros((n_groups, nk, nx))
    logK = math.log(K)
    rt2 = math.sqrt(2.0)
    sq = math.sqrt(tau)
    for n in range(rb.size):
        sd = math.sqrt(s2[n]) * sq
        drift = (rb[n] - ab[n] + 0.5 * s2[n]) * tau - logK
        da = math.exp(-ab[n] * tau)
        dr = K * math.exp(-rb[n] * tau)
        gi = group[n]
        for ix in range(nx):
            d1 = (logx[ix] + drift) / sd
            d2 = d1 - sd
            v = x[ix] * da * 0.5 * math.erfc(-d1 / rt2) - dr * 0.5 * math.erfc(-d2 / rt2)
            for k in range(nk):
                out[gi, k, ix] += weights[k, n] * v
    return out


def _flat(v):
    return np.ptp(v) <= 1e-13 * (1.0 + np.abs(v).max())


def _collapse_s2(weights, group, n_groups, s2):
    """Move component weights onto Chebyshev nodes in sigma^2 (Lagrange basis).

    Returns (node_s2, node_weights[grp, k, node]).  The call price is analytic
    in sigma^2 on the node interval, so the interpolation error is far below
    the sampling error of the components it replaces.
    """
    lo, hi = float(s2.min()), float(s2.max())
    j = np.arange(_S2_NODES)
    nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * j / (_S2_NODES - 1))
    basis = BarycentricInterpolator(nodes, np.eye(_S2_NODES))(s2)          # (n, nodes)
    nw = np.zeros((n_groups, weights.shape[0], _S2_NODES))
    for gi in range(n_groups):
        sel = group == gi
        nw[gi] = weights[:, sel] @ basis[sel]
    return nodes, nw


def _mixture(x, weights, group, n_groups, rb, s2, ab, final, tau, g, quad):
    """out[grp, k, x] = sum_n weights[k, n] V(x; r_n, s2_n, tau, alpha_n)  over components n in grp."""
    x = np.asarray(x, dtype=float)
    nk = weights.shape[0]
    if rb.size == 0:
        return np.zeros((n_groups, nk, x.size))
    if isinstance(g, CallPayoff) and rb.size >= _S2_MIN_COMPONENTS and _flat(rb) and _flat(ab) \
            and np.ptp(s2) > 1e-12 * s2.max():
        nodes, nw = _collapse_s2(weights, group, n_groups, s2)
        V = call_closed_form(x[None, :], rb.mean(), np.sqrt(nodes)[:, None], tau, ab.mean(), g.strike)
        return nw @ V
    if isinstance(g, CallPayoff) and _accel.use_numba():
        return _call_mix_nb(np.log(x), x, np.ascontiguousarray(weights), group.astype(np.int64),
                            rb, s2, ab, float(tau), g.strike, int(n_groups))
    out = np.zeros((n_groups, nk, x.size))
    per = 1 if isinstance(g, CallPayoff) else 2 * quad.hermite_nodes
    chunk = max(1, _CHUNK_ELEMS // (x.size * per))
    regime_free = isinstance(g, CallPayoff) or getattr(g, "regime_independent", False)
    for a in range(0, rb.size, chunk):
        sl = slice(a, a + chunk)
        if isinstance(g, CallPayoff):
            V = call_closed_form(x[None, :], rb[sl, None], np.sqrt(s2[sl, None]), tau, ab[sl, None], g.strike)
        elif regime_free:
            V = value_V(x[None, :], rb[sl, None], np.sqrt(s2[sl, None]), tau, ab[sl, None], g, quad)
        else:
            V = np.empty((rb[sl].size, x.size))
            fin = final[sl]
            for j in np.unique(fin):
                sel = fin == j
                V[sel] = value_V(x[None, :], rb[sl][sel, None], np.sqrt(s2[sl][sel, None]), tau,
                                 ab[sl][sel, None], g, quad, regime=int(j))
        grp = group[sl]
        for gi in np.unique(grp):
            sel = grp == gi
            out[gi] += weights[:, sl][:, sel] @ V[sel]
    return out


# --- switch-time components ---------------------------------------------------------

@dataclass
class _Components:
    weights: np.ndarray      # (2, n): rows are the w- and u-variant weights
    group: np.ndarray        # (n,) replicate index
    n_groups: int
    r: np.ndarray
    s2: np.ndarray
    alpha: np.ndarray
    final: np.ndarray


def _blend(model, regimes, durations, tau):
    r = (model.r[regimes] * durations).sum(axis=1) / tau
    s2 = ((model.sigma ** 2)[regimes] * durations).sum(axis=1) / tau
    a = (model.alpha[regimes] * durations).sum(axis=1) / tau
    return r, s2, a


def _sequences(p, i, k):
    """All regime sequences of length k + 1 starting at i with consecutive entries distinct."""
    out = []
    for steps in itertools.product(range(p - 1), repeat=k):
        seq = [i]
        for s in steps:
            nxt = s if s < seq[-1] else s + 1
            seq.append(nxt)
        out.append(tuple(seq))
    return out


def _quadrature_components(k, t, T, i, model, quad) -> _Components:
    """Tensor Gauss-Legendre over the k-simplex of switch times (k in {1, 2})."""
    q = model.Q.matrix
    p = model.p
    tau = T - t
    gl, gw = np.polynomial.legendre.leggauss(quad.legendre_nodes)
    u01 = 0.5 * (gl + 1.0)
    if k == 1:
        s = t + tau * u01
        h = 0.5 * tau * gw
        times = s[:, None]
        jac = h
    elif k == 2:
        s1 = np.repeat(t + tau * u01, gl.size)
        h1 = np.repeat(0.5 * tau * gw, gl.size)
        v = np.tile(u01, gl.size)
        hv = np.tile(0.5 * gw, gl.size)
        s2 = s1 + (T - s1) * v
        times = np.stack([s1, s2], axis=1)
        jac = h1 * hv * (T - s1)
    else:
        raise ValueError("deterministic quadrature covers levels 1 and 2 only")
    edges = np.concatenate([np.full((times.shape[0], 1), t), times, np.full((times.shape[0], 1), T)], axis=1)
    durations = np.diff(edges, axis=1)
    parts = []
    for seq in _sequences(p, i, k):
        rate = np.prod([q[seq[a], seq[a + 1]] for a in range(k)])
        if rate == 0:
            continue
        expo = sum(q[seq[a], seq[a]] * durations[:, a] for a in range(k))
        ww = rate * jac * np.exp(expo)
        wu = ww * np.exp(q[seq[k], seq[k]] * durations[:, k])
        regs = np.broadcast_to(np.array(seq), durations.shape)
        r, s2_, a = _blend(model, regs, durations, tau)
        parts.append((ww, wu, r, s2_, a, np.full(ww.size, seq[k])))
    return _pack(parts, n_groups=1)


def _pack(parts, n_groups, groups=None) -> _Components:
    if not parts:
        e = np.zeros(0)
        return _Components(np.zeros((2, 0)), np.zeros(0, dtype=np.int64), n_groups, e, e, e,
                           np.zeros(0, dtype=np.int64))
    ww, wu, r, s2, a, fin = (np.concatenate(z) for z in zip(*parts))
    grp = np.zeros(ww.size, dtype=np.int64) if groups is None else np.concatenate(groups)
    return _Components(np.stack([ww, wu]), grp, n_groups, r, s2, a, fin.astype(np.int64))


def _draw_uniforms(k, dims, quad: QuadratureSpec, seed: int):
    """Uniform matrices, one per replicate, shape (N, dims); identical for every (t, x)."""
    n = quad.per_replicate()
    out = []
    for rep in range(quad.replicates):
        if quad.sampling == "rqmc":
            eng = qmc.Sobol(dims, scramble=True, seed=np.random.default_rng([seed, k, rep]))
            out.append(eng.random_base2(int(math.log2(n))))
        else:
            paths = np.arange(rep * n, (rep + 1) * n, dtype=np.int64)
            # level k owns the index block [k * 64, k * 64 + dims)
            idx = k * 64 + np.arange(dims)
            out.append(uniforms(seed, STREAM_SWITCH, paths[:, None], idx[None, :]))
    return out


def _sampled_components(k, t, T, i, model, quad, seed, draws=None) -> _Components:
    """Conditionally exact components of the level-k correction from sampled switch times."""
    p = model.p
    q = model.Q.matrix
    tau = T - t
    enumerate_dest = (p - 1) ** k <= _MAX_ENUMERATED
    dims = k if enumerate_dest else 2 * k
    if draws is None:
        draws = _draw_uniforms(k, dims, quad, seed)
    seqs = _sequences(p, i, k) if enumerate_dest else [None]
    parts, groups = [], []
    for rep, U in enumerate(draws):
        n = U.shape[0]
        for seq in seqs:
            if seq is not None and np.prod([q[seq[a], seq[a + 1]] for a in range(k)]) == 0:
                continue
            times, regs, wts = sample_forced_switches(
                model.Q, i, t, T, k, U[:, :k], None if seq is not None else U[:, k:], sequence=seq)
            edges = np.concatenate([np.full((n, 1), t), times, np.full((n, 1), T)], axis=1)
            durations = np.diff(edges, axis=1)
            ww = wts / n
            wu = ww * np.exp(q[regs[:, k], regs[:, k]] * durations[:, k])
            r, s2, a = _blend(model, regs, durations, tau)
            parts.append((ww, wu, r, s2, a, regs[:, k]))
            groups.append(np.full(n, rep, dtype=np.int64))
    return _pack(parts, quad.replicates, groups)


def _level(k, t, T, x, i, model, g, quad, seed=None, sampled=False, draws=None):
    """Level-k correction (w and u variants) at one time and a vector of states.

    Returns ``(values (2, nx), stderr (2, nx))``; stderr is zero for quadrature.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t >= T:
        z = np.zeros((2, x.size))
        return z, z
    if not sampled:
        c = _quadrature_components(k, t, T, i, model, quad)
    else:
        c = _sampled_components(k, t, T, i, model, quad, seed, draws)
    mix = _mixture(x, c.weights, c.group, c.n_groups, c.r, c.s2, c.alpha, c.final, T - t, g, quad)
    if not sampled:
        return mix[0], np.zeros_like(mix[0])
    R = c.n_groups
    mean = mix.mean(axis=0)
    err = mix.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(mean)
    return mean, err


# --- public iterates ------------------------------------------------------------------

def _scalar_out(x, arr):
    return float(arr[0]) if np.ndim(x) == 0 else arr


def _base(t, x, i, model, g, T, quad):
    x1 = np.atleast_1d(np.asarray(x, dtype=float))
    return value_V(x1, model.r[i], model.sigma[i], max(T - t, 0.0), model.alpha[i], g, quad, regime=i)


def w0(t, x, i, model: GbmRegimeModel, g, quad: QuadratureSpec = DEFAULT_QUAD, T: float | None = None):
    """Value with no switching: V(x, r_i, sigma_i, T - t, alpha_i)."""
    g, T = _resolve(g, T)
    if t > T:
        raise ValueError("t must not exceed the horizon")
    return _scalar_out(x, _base(t, x, i, model, g, T, quad))


def u0(t, x, i, model: GbmRegimeModel, g, quad: QuadratureSpec = DEFAULT_QUAD, T: float | None = None):
    """e^{q_ii (T - t)} w0."""
    g, T = _resolve(g, T)
    if t > T:
        raise ValueError("t must not exceed the horizon")
    lam = math.exp(model.Q.matrix[i, i] * (T - t))
    return _scalar_out(x, lam * _base(t, x, i, model, g, T, quad))


def _check_variant(variant):
    if variant not in ("w", "u"):
        raise ValueError(f"variant must be 'w' or 'u', got {variant!r}")
    return 0 if variant == "w" else 1


def iterate_level1(t, x, i, model, g, quad: QuadratureSpec = DEFAULT_QUAD, variant: str = "w",
                   T: float | None = None):
    """w_1 or u_1: u_0 plus the one-switch correction."""
    row = _check_variant(variant)
    g, T = _resolve(g, T)
    base = np.atleast_1d(u0(t, x, i, model, g, quad, T))
    c, _ = _level(1, t, T, x, i, model, g, quad)
    return _scalar_out(x, base + c[row])


def iterate_level2(t, x, i, model, g, quad: QuadratureSpec = DEFAULT_QUAD, variant: str = "w",
                   T: float | None = None):
    """w_2 or u_2: u_1 plus the two-switch correction."""
    row = _check_variant(variant)
    g, T = _resolve(g, T)
    u1 = np.atleast_1d(iterate_level1(t, x, i, model, g, quad, "u", T))
    c, _ = _level(2, t, T, x, i, model, g, quad)
    return _scalar_out(x, u1 + c[row])


def correction(k: int, t, x, i, model, g, quad: QuadratureSpec = DEFAULT_QUAD, rng=0, variant: str = "w",
               T: float | None = None):
    """Sampled level-k correction E[1(tau_k <= T) Theta f_0(tau_k, ...)] and its standard error."""
    from .streams import as_seed

    row = _check_variant(variant)
    g, T = _resolve(g, T)
    if k < 1:
        raise ValueError("correction level starts at 1")
    val, err = _level(k, t, T, x, i, model, g, quad, seed=as_seed(rng), sampled=True)
    return _scalar_out(x, val[row]), _scalar_out(x, err[row])


def iterate_general(m: int, t, x, i, model, g, quad: QuadratureSpec = DEFAULT_QUAD, rng=0,
                    variant: str = "w", T: float | None = None):
    """Iterate m with the deep corrections estimated from sampled switch times.

    The deterministic part is u_{min(m-1, 2)}; corrections of levels 3 .. m-1
    (u-variant) and the final level-m correction are sampled, so for m = 1 and
    m = 2 this is an independent check of the quadrature iterates.
    Returns ``(estimate, stderr)``.
    """
    from .streams import as_seed

    row = _check_variant(variant)
    if m < 1:
        raise ValueError("m must be at least 1")
    if quad.path_samples < 100:
        raise ValueError("path_samples must be at least 100")
    g, T = _resolve(g, T)
    seed = as_seed(rng)
    det = min(m - 1, 2)
    if det == 0:
        base = np.atleast_1d(u0(t, x, i, model, g, quad, T))
    elif det == 1:
        base = np.atleast_1d(iterate_level1(t, x, i, model, g, quad, "u", T))
    else:
        base = np.atleast_1d(iterate_level2(t, x, i, model, g, quad, "u", T))
    var = np.zeros_like(base)
    for k in range(det + 1, m + 1):
        r_k = row if k == m else 1
        val, err = _level(k, t, T, x, i, model, g, quad, seed=seed, sampled=True)
        base = base + val[r_k]
        var = var + err[r_k] ** 2
    return _scalar_out(x, base), _scalar_out(x, np.sqrt(var))


# --- grid sweep ----------------------------------------------------------------------------

@dataclass
class IterateGrid:
    """Iterates on a (t, x) grid: ``w[m]`` and ``u[m]`` have shape (p, n_t, n_x)."""

    t: np.ndarray
    x: np.ndarray
    w: list
    u: list
    w_stderr: list
    u_stderr: list

    @property
    def m_max(self) -> int:
        return len(self.w) - 1

    def family(self, variant: str):
        return self.w if variant == "w" else self.u


def iterate_grid(model: GbmRegimeModel, g, t_grid, x_grid, m_max: int, quad: QuadratureSpec = DEFAULT_QUAD,
                 rng=0, T: float | None = None, regimes=None) -> IterateGrid:
    """All iterates 0..m_max at every grid point.

    Levels 1 and 2 use quadrature; deeper levels reuse one set of sampled
    switch uniforms for every grid point (common random numbers), so the
    surface is smooth in (t, x) and its extrema are not inflated by noise.
    """
    from .streams import as_seed

    g, T = _resolve(g, T)
    seed = as_seed(rng)
    t_grid = np.asarray(t_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    p = model.p
    nt, nx = t_grid.size, x_grid.size
    regimes = range(p) if regimes is None else regimes
    shape = (p, nt, nx)
    corr = np.zeros((m_max + 1, 2) + shape)
    cerr = np.zeros((m_max + 1, 2) + shape)
    w0g = np.zeros(shape)
    q = model.Q.matrix
    draws = {}
    for i in regimes:
        for a, t in enumerate(t_grid):
            w0g[i, a] = _base(t, x_grid, i, model, g, T, quad)
            for k in range(1, m_max + 1):
                sampled = k >= 3
                if sampled and (k, i) not in draws:
                    enum = (p - 1) ** k <= _MAX_ENUMERATED
                    draws[(k, i)] = _draw_uniforms(k, k if enum else 2 * k, quad, seed)
                val, err = _level(k, t, T, x_grid, i, model, g, quad, seed=seed, sampled=sampled,
                                  draws=draws.get((k, i)))
                corr[k, :, i, a] = val
                cerr[k, :, i, a] = err
    lam = np.exp(np.diag(q)[:, None] * (T - t_grid)[None, :])[:, :, None]
    u = [lam * w0g]
    uerr2 = [np.zeros(shape)]
    w = [w0g]
    werr = [np.zeros(shape)]
    for k in range(1, m_max + 1):
        w.append(u[k - 1] + corr[k, 0])
        werr.append(np.sqrt(uerr2[k - 1] + cerr[k, 0] ** 2))
        u.append(u[k - 1] + corr[k, 1])
        uerr2.append(uerr2[k - 1] + cerr[k, 1] ** 2)
    return IterateGrid(t_grid, x_grid, w, u, werr, [np.sqrt(e) for e in uerr2])


def w0_evaluator(model: GbmRegimeModel, g, quad: QuadratureSpec = DEFAULT_QUAD, T: float | None = None):
    """Vectorised ``w0(t, x, i)`` over arrays of times, states and regimes (for the MC oracle)."""
    g, T = _resolve(g, T)

    def ev(t, x, i):
        t, x, i = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float), np.asarray(i))
        out = np.empty(x.shape)
        for j in np.unique(i):
            sel = i == j
            j = int(j)
            tau = np.maximum(T - t[sel], 0.0)
            if isinstance(g, CallPayoff):
                out[sel] = call_closed_form(x[sel], model.r[j], model.sigma[j], tau, model.alpha[j], g.strike)
            else:
                out[sel] = value_V(x[sel], model.r[j], model.sigma[j], tau, model.alpha[j], g, quad, regime=j)
        return out

    return ev
