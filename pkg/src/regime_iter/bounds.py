"""Bound functions N_m, M_r, their extrema, and the hard bounds L_m <= v <= U_m.

The extrema are taken over a truncated (t, x) grid; the truncation is part of
every report so users can widen it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteValue, SandwichUnavailable
from .model import GbmRegimeModel, GeneratorMatrix


def annuity(r, delta):
    """(1 - e^{-r delta}) / r, with the limit delta at r = 0."""
    r = np.asarray(r, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ValueError("delta must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r == 0, delta, -np.expm1(-r * delta) / np.where(r == 0, 1.0, r))
    return out[()] if out.ndim == 0 else out


def m_r_function(t, x, i: int, Q: GeneratorMatrix, r: Sequence[float], T: float):
    """M_r(t, x, i) = sum_j q_ij(x) annuity(r_j, T - t) for per-regime constant rates.

    State-dependent rates go through :func:`m_r_estimate`.
    """
    q = Q.matrix if Q.is_constant else Q.at(np.atleast_1d(np.asarray(x, dtype=float)))[0]
    a = annuity(np.asarray(r, dtype=float), max(T - t, 0.0))
    return float(q[i] @ a)


def m_r_estimate(t, x, i, Q: GeneratorMatrix, coefficients, T: float, n_paths: int = 10_000,
                 seed: int = 0, h: float = 1e-2):
    """M_r by single-regime Euler simulation of E_0[int Theta ds]; returns (mean, stderr)."""
    q = Q.matrix if Q.is_constant else Q.at(np.array([float(x)]))[0]
    mean = 0.0
    var = 0.0
    for j in range(Q.p):
        if q[i, j] == 0:
            continue
        m, s = discounted_time_mc(t, x, j, coefficients, T, n_paths, seed + 7919 * j, h)
        mean += q[i, j] * m
        var += (q[i, j] * s) ** 2
    return mean, math.sqrt(var)


def discounted_time_mc(t, x, i, coefficients, T, n_paths=10_000, seed=0, h=1e-2):
    """E_0^{t,x,i}[int_t^T Theta_{t,s} ds] for one frozen regime (Euler, trapezoid)."""
    from .streams import STREAM_STEP, normals

    n_steps = max(1, int(math.ceil((T - t) / h)))
    dt = (T - t) / n_steps
    X = np.full(n_paths, float(x))
    reg = np.full(n_paths, i)
    paths = np.arange(n_paths)
    logtheta = np.zeros(n_paths)
    acc = np.zeros(n_paths)
    s = t
    r_prev = coefficients.eval("rate", s, X, reg)
    for k in range(n_steps):
        z = normals(seed, STREAM_STEP, paths, k)
        b = coefficients.eval("drift", s, X, reg)
        v = coefficients.eval("vol", s, X, reg)
        X = X + b * dt + v * math.sqrt(dt) * z
        s = t + (k + 1) * dt
        r_new = coefficients.eval("rate", s, X, reg)
        th_prev = np.exp(logtheta)
        logtheta = logtheta - 0.5 * (r_prev + r_new) * dt
        acc += 0.5 * (th_prev + np.exp(logtheta)) * dt
        r_prev = r_new
    return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(n_paths))


@dataclass(frozen=True)
class TruncationGrid:
    """Grid for essential extrema: ``n_x`` states on [x_lo, x_hi] and ``n_t`` times on [0, T]."""

    x_lo: float = 0.25
    x_hi: float = 4.0
    n_x: int = 501
    n_t: int = 101

    def __post_init__(self):
        if not 0 < self.x_lo < self.x_hi:
            raise ValueError("need 0 < x_lo < x_hi")
        if self.n_x < 2 or self.n_t < 1:
            raise ValueError("need n_x >= 2 and n_t >= 1")

    @classmethod
    def for_strike(cls, K: float, **kw) -> "TruncationGrid":
        return cls(0.25 * K, 4.0 * K, **kw)

    def x_points(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_x)

    def t_points(self, T: float) -> np.ndarray:
        return np.linspace(0.0, T, self.n_t) if self.n_t > 1 else np.zeros(1)

    def describe(self) -> str:
        return f"x in [{self.x_lo:g}, {self.x_hi:g}] x {self.n_x} pts, t x {self.n_t} pts"


@dataclass(frozen=True)
class BoundScalars:
    N_U: tuple
    N_L: tuple
    M_U: float = 0.0
    M_L: float = 0.0
    grid: TruncationGrid | None = field(default=None, compare=False)

    def __post_init__(self):
        if any(v < 0 for v in self.N_U) or any(v > 0 for v in self.N_L):
            raise ValueError("N_U entries must be >= 0 and N_L entries <= 0")
        if self.M_U < 0 or self.M_L > 0:
            raise ValueError("M_U must be >= 0 and M_L <= 0")

    @property
    def sandwich_valid(self) -> bool:
        return self.M_U < 1

    def width(self, m: int) -> float:
        return self.N_U[m] - self.N_L[m]


def bound_function_N(m: int, t, x, i: int, f: Callable, Q: GeneratorMatrix):
    """N_m(t, x, i; f) for an iterate family ``f(m, t, x, j)``.

    m = 0: sum_j q_ij f_0(j);  m >= 1: sum_{j != i} q_ij (f_m - f_{m-1})(j).
    """
    q = Q.matrix if Q.is_constant else Q.at(np.atleast_1d(np.asarray(x, dtype=float)))[0]
    total = 0.0
    for j in range(Q.p):
        if q[i, j] == 0:
            continue
        if m == 0:
            total = total + q[i, j] * f(0, t, x, j)
        elif j != i:
            total = total + q[i, j] * (f(m, t, x, j) - f(m - 1, t, x, j))
    return total


def bound_field_N(m: int, family: Sequence[np.ndarray], Q: GeneratorMatrix, x=None) -> np.ndarray:
    """N_m on a whole grid; ``family[m]`` has shape (p, n_t, n_x).

    For a state-dependent generator pass the grid states ``x`` (length n_x).
    """
    p = Q.p
    if Q.is_constant:
        q = np.broadcast_to(Q.matrix, (1, p, p))
    else:
        q = Q.at(np.asarray(x, dtype=float))                      # (n_x, p, p)
    qij = np.moveaxis(q, 0, -1)                                    # (p, p, n_x or 1)
    qij = qij[:, :, None, :]                                       # (p, p, 1, n_x)
    if m == 0:
        d = family[0]
        return np.einsum("ijtx,jtx->itx", np.broadcast_to(qij, (p, p) + d.shape[1:]), d)
    d = family[m] - family[m - 1]
    off = qij * (1 - np.eye(p))[:, :, None, None]
    return np.einsum("ijtx,jtx->itx", np.broadcast_to(off, (p, p) + d.shape[1:]), d)


def essential_extrema(field, grid: TruncationGrid | None = None, regimes: Sequence[int] = (0,),
                      T: float | None = None):
    """(max of positive part, min of negative part) of a field over the grid.

    ``field`` is either an array of values or a callable ``field(t, x, i)``
    vectorised over a (t, x) mesh.
    """
    if callable(field):
        if grid is None or T is None:
            raise ValueError("a callable field needs a grid and a horizon")
        tt, xx = np.meshgrid(grid.t_points(T), grid.x_points(), indexing="ij")
        vals = np.stack([np.broadcast_to(np.asarray(field(tt, xx, i), dtype=float), tt.shape) for i in regimes])
    else:
        vals = np.asarray(field, dtype=float)
    if vals.size == 0:
        raise ValueError("empty grid")
    if not np.all(np.isfinite(vals)):
        raise NonFiniteValue("bound field has non-finite values on the grid")
    return float(max(vals.max(), 0.0)), float(min(vals.min(), 0.0))


def m_r_extrema(Q: GeneratorMatrix, r: Sequence[float], T: float, t_points) -> tuple[float, float]:
    """(M_U, M_L) for per-regime constant rates; M_r then depends on t only."""
    if np.all(np.asarray(r) == np.asarray(r).ravel()[0]):
        return 0.0, 0.0
    vals = [m_r_function(t, 1.0, i, Q, r, T) for t in np.asarray(t_points) for i in range(Q.p)]
    return essential_extrema(np.array(vals))


def scalars_from_family(family, Q: GeneratorMatrix, m_max: int, M_U: float = 0.0, M_L: float = 0.0,
                        grid: TruncationGrid | None = None, x=None) -> BoundScalars:
    nu, nl = [], []
    for m in range(m_max + 1):
        hi, lo = essential_extrema(bound_field_N(m, family, Q, x))
        nu.append(hi)
        nl.append(lo)
    return BoundScalars(tuple(nu), tuple(nl), M_U, M_L, grid)


def hard_bounds(m: int, t, x, i: int, f_m_value, scalars: BoundScalars, r_i: float | None = None,
                model: GbmRegimeModel | None = None, T: float | None = None, discounted_time=None):
    """(L_m, U_m) around the iterate value ``f_m_value``.

    The discounted time E_0[int_t^T Theta^i ds] is ``annuity(r_i, T - t)`` for
    a constant rate, or passed in as ``discounted_time``.  Both bounds divide
    by 1 - M_U: this is the factor that dominates E_Q[int Theta ds] from above,
    which is what the lower bound needs because N_L <= 0.
    """
    if scalars.M_U >= 1:
        raise SandwichUnavailable(f"M_r^U = {scalars.M_U:g} >= 1; the bounds are not available")
    if discounted_time is None:
        if r_i is None:
            if model is None:
                raise ValueError("need r_i, a model or discounted_time")
            r_i = float(model.r[i])
        if T is None:
            raise ValueError("the horizon T is required")
        discounted_time = annuity(r_i, np.maximum(T - np.asarray(t, dtype=float), 0.0))
    scale = discounted_time / (1.0 - scalars.M_U)
    f = np.asarray(f_m_value, dtype=float)
    L = f + scalars.N_L[m] * scale
    U = f + scalars.N_U[m] * scale
    if np.ndim(L) == 0:
        return float(L), float(U)
    return L, U


@dataclass
class GbmBoundReport:
    """Iterates on the truncation grid together with the bound scalars."""

    scalars: BoundScalars
    iterates: object
    variant: str
    T: float
    model: GbmRegimeModel

    def band(self, m: int, t, x, i: int, f_m_value):
        return hard_bounds(m, t, x, i, f_m_value, self.scalars, float(self.model.r[i]), T=self.T)


def gbm_bound_report(model: GbmRegimeModel, g, T: float, grid: TruncationGrid, m_max: int,
                     variant: str = "w", quad=None, rng=0) -> GbmBoundReport:
    """Iterates 0..m_max on the grid (semi-analytic) and the resulting bound scalars."""
    from .gbm_semianalytic import QuadratureSpec, iterate_grid

    quad = quad or QuadratureSpec(path_samples=4096)
    it = iterate_grid(model, g, grid.t_points(T), grid.x_points(), m_max, quad, rng, T=T)
    M_U, M_L = m_r_extrema(model.Q, model.r, T, grid.t_points(T))
    sc = scalars_from_family(it.family(variant), model.Q, m_max, M_U, M_L, grid)
    return GbmBoundReport(sc, it, variant, T, model)


def discounted_time_grid(coefficients, lattice, regimes=None) -> np.ndarray:
    """E_0^{t,x,i}[int_t^T Theta ds] on a lattice, one frozen-regime solve per regime.

    Solves D_t + L_i D - r_i D = -1 with D(T) = 0; for a constant rate this is
    ``annuity(r_i, T - t)``.  Shape (p, n_t + 1, n_x + 1).
    """
    from .fd_solver import Linear, solve_single_regime

    p = coefficients.p
    out = np.zeros((p, lattice.n_t + 1, lattice.n_x + 1))
    for i in (range(p) if regimes is None else regimes):
        out[i] = solve_single_regime(coefficients.drift[i], coefficients.vol[i], coefficients.rate[i], -1.0,
                                     np.zeros(lattice.n_x + 1), Linear(), lattice)
    return out


def m_r_field(Q: GeneratorMatrix, discounted, x) -> np.ndarray:
    """M_r(t, x, i) = sum_j q_ij(x) E_0^{t,x,j}[int Theta ds] from per-regime grids (p, n_t, n_x)."""
    q = np.broadcast_to(Q.matrix, (np.size(x), Q.p, Q.p)) if Q.is_constant else Q.at(np.asarray(x, dtype=float))
    return np.einsum("xij,jtx->itx", q, discounted)
