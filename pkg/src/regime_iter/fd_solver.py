"""Finite differences for the decoupled per-regime problems.

Each iteration solves p independent one-dimensional terminal-value problems

    f_t + b f_x + (v^2 / 2) f_xx - pot f = src,    f(T, x) = g(x, i),

with the coupling to the other regimes frozen into ``src`` from the previous
iterate.  Theta-scheme in time (Crank-Nicolson with a short implicit start),
and a compact fourth-order stencil (or plain central differences) on a
uniform lattice in x or in log x.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from . import _accel
from ._accel import njit
from .errors import InvalidProblem, OutOfHull, SingularSystem
from .model import GeneralCoefficients, GeneratorMatrix, Interval, ProblemSpec, check_finite

_PIVOT_TINY = 1e-300


@dataclass(frozen=True)
class Lattice:
    """``n_x`` intervals on [x_lo, x_hi] (uniform in log x for ``"log"``) and ``n_t`` time steps."""

    x_lo: float
    x_hi: float
    n_x: int
    T: float
    n_t: int
    transform: str = "log"

    def __post_init__(self):
        if self.transform not in ("log", "identity"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if not self.x_lo < self.x_hi:
            raise ValueError("need x_lo < x_hi")
        if self.transform == "log" and self.x_lo <= 0:
            raise ValueError("a log lattice needs x_lo > 0")
        if self.n_x < 3 or self.n_t < 1:
            raise ValueError("need n_x >= 3 and n_t >= 1")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def z(self) -> np.ndarray:
        if self.transform == "log":
            return np.linspace(math.log(self.x_lo), math.log(self.x_hi), self.n_x + 1)
        return np.linspace(self.x_lo, self.x_hi, self.n_x + 1)

    @property
    def x(self) -> np.ndarray:
        x = np.exp(self.z) if self.transform == "log" else self.z
        x[0], x[-1] = self.x_lo, self.x_hi
        return x

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    def refined(self) -> "Lattice":
        return Lattice(self.x_lo, self.x_hi, 2 * self.n_x, self.T, 2 * self.n_t, self.transform)


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed values ``lo(t)``, ``hi(t)`` at the two ends."""

    lo: Callable[[float], float]
    hi: Callable[[float], float]


@dataclass(frozen=True)
class Linear:
    """Zero curvature in x at both ends (the solution is locally affine there)."""


@dataclass
class GridSolution:
    """``values[i]`` is the (n_t + 1, n_x + 1) grid of regime i; row k is time ``lattice.t[k]``."""

    values: np.ndarray
    lattice: Lattice
    m: int
    variant: str
    boundary: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.values.shape[0]


# --- tridiagonal kernels ---------------------------------------------------------------

@njit
def _thomas_nb(lower, diag, upper, rhs):
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    piv = diag[0]
    if abs(piv) < 1e-300:
        return d, 0
    c[0] = upper[0] / piv
    d[0] = rhs[0] / piv
    for k in range(1, n):
        piv = diag[k] - lower[k] * c[k - 1]
        if abs(piv) < 1e-300:
            return d, k
        c[k] = upper[k] / piv if k < n - 1 else 0.0
        d[k] = (rhs[k] - lower[k] * d[k - 1]) / piv
    for k in range(n - 2, -1, -1):
        d[k] -= c[k] * d[k + 1]
    return d, -1


def _solve_tridiag(lower, diag, upper, rhs, level):
    """Solve with lower[k] multiplying x[k-1] and upper[k] multiplying x[k+1]."""
    if _accel.use_numba():
        out, bad = _thomas_nb(lower, diag, upper, rhs)
        if bad >= 0:
            raise SingularSystem(f"zero pivot at row {bad}, time level {level}: diag={diag[bad]:g}, "
                                 f"lower={lower[bad]:g}, upper={upper[bad]:g}")
        return out
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    try:
        out = solve_banded((1, 1), ab, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"singular tridiagonal system at time level {level}: {exc}") from None
    if not np.all(np.isfinite(out)):
        raise SingularSystem(f"non-finite solution at time level {level}")
    return out


# --- one regime ---------------------------------------------------------------------------

def _field(f, t, x, level):
    if f is None:
        return np.zeros_like(x)
    if callable(f):
        return np.broadcast_to(np.asarray(f(t, x), dtype=float), x.shape).astype(float)
    arr = np.asarray(f, dtype=float)
    return arr[level] if arr.ndim == 2 else np.broadcast_to(arr, x.shape)


def _operator(lat: Lattice, drift, vol, pot, t, level, compact: bool):
    """Row stencils of the discretised problem  M u_t + A u - M(pot u) = M src.

    Returns (A, M, pot) with A and M as (lower, diag, upper) triples.  The
    central scheme has M = I.  The compact scheme freezes the coefficients at
    each node and removes the leading truncation error of the central
    differences, which makes it fourth order for constant coefficients
    (the GBM operator in log x) while staying tridiagonal.
    """
    x = lat.x
    b = _field(drift, t, x, level)
    v = _field(vol, t, x, level)
    pt = _field(pot, t, x, level)
    check_finite(b, "drift", t=t)
    check_finite(v, "vol", t=t)
    check_finite(pt, "potential", t=t)
    if lat.transform == "log":
        a = 0.5 * v * v / (x * x)
        c = b / x - a
    else:
        a = 0.5 * v * v
        c = b
    h = lat.dz
    ones = np.ones_like(a)
    if compact and np.all(a > 0):
        ca = c / a
        c_eff = c * (1 - h * h * ca * ca / 12)
        m_lo = (1 - 0.5 * h * ca) / 12
        m_up = (1 + 0.5 * h * ca) / 12
        m_dg = 1 - 2 / 12 - h * h * ca * ca / 12
        M = (m_lo, m_dg, m_up)
    else:
        c_eff = c
        M = (0 * ones, ones, 0 * ones)
    A = (a / h ** 2 - c_eff / (2 * h), -2 * a / h ** 2, a / h ** 2 + c_eff / (2 * h))
    return A, M, pt


# --- terminal data with kinks --------------------------------------------------------------

def _b3(s):
    s = np.abs(s)
    return np.where(s < 1, 2 / 3 - s * s + 0.5 * s ** 3, np.where(s < 2, (2 - s) ** 3 / 6, 0.0))


def _hat(s):
    return np.maximum(1 - np.abs(s), 0.0)


def _kreiss_kernel(s):
    # cubic B-spline minus 1/6 of its second difference: Fourier symbol 1 + O(w^4)
    # with fourth-order zeros at the aliases, so smooth data moves by O(h^4) only
    return _b3(s) - (_hat(s + 1) - 2 * _hat(s) + _hat(s - 1)) / 6


_SMOOTH_GL = np.polynomial.legendre.leggauss(16)


def smoothed_terminal(lattice: Lattice, g: Callable, kinks: Sequence[float] = ()) -> np.ndarray:
    """Node values of ``g`` convolved with a fourth-order smoothing kernel of width 4 dz.

    Sampling a kinked payoff at the nodes limits any scheme to second order
    near the kink.  Starting the sweep from this projection instead restores
    the scheme's full order; the kernel integrals are split at the kinks.
    The two end nodes keep their sampled values.
    """
    z = lattice.z
    h = lattice.dz
    log = lattice.transform == "log"
    kz = [math.log(k) if log else k for k in kinks if (k > 0 or not log)]
    nodes, weights = _SMOOTH_GL
    zi = z[1:-1]
    out = np.zeros_like(zi)
    for a in (-2, -1, 0, 1):
        edges = [np.full_like(zi, a), np.full_like(zi, a + 1)] + [np.clip((k - zi) / h, a, a + 1) for k in kz]
        edges = np.sort(np.stack(edges, -1), -1)
        for e in range(edges.shape[-1] - 1):
            lo, hi = edges[:, e:e + 1], edges[:, e + 1:e + 2]
            s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes
            zz = zi[:, None] + h * s
            vals = np.asarray(g(np.exp(zz) if log else zz), dtype=float)
            out += np.sum(0.5 * (hi - lo) * weights * _kreiss_kernel(s) * vals, -1)
    full = np.asarray(g(lattice.x), dtype=float).copy()
    full[1:-1] = check_finite(out, "smoothed terminal")
    return full


def _linear_extrapolation(lat: Lattice):
    """f[0] = a0 f[1] + b0 f[2] and f[N] = aN f[N-1] + bN f[N-2] for affine-in-x ends."""
    x = lat.x
    a0 = (x[0] - x[2]) / (x[1] - x[2])
    b0 = 1 - a0
    aN = (x[-1] - x[-3]) / (x[-2] - x[-3])
    bN = 1 - aN
    return a0, b0, aN, bN


def solve_single_regime(drift, vol, potential, source, terminal, boundary, lattice: Lattice,
                        theta: float = 0.5, implicit_steps: int = 2, compact: bool = True,
                        start=None) -> np.ndarray:
    """Backward theta-scheme sweep; returns values of shape (n_t + 1, n_x + 1).

    ``drift``, ``vol``, ``potential`` and ``source`` are callables ``f(t, x)``
    or arrays (constant, per node, or per (level, node)).  ``terminal`` is a
    callable of x or an array of node values.  The first ``implicit_steps``
    steps from T use theta = 1 to damp payoff kinks.  ``compact=False``
    selects plain central differences.  ``start`` (node values) replaces
    the terminal data as the state the first step acts on, while the stored
    terminal row stays exactly ``terminal``; see :func:`smoothed_terminal`.
    """
    if not 0 <= theta <= 1:
        raise ValueError("theta must lie in [0, 1]")
    lat = lattice
    x = lat.x
    tl = lat.t
    N = lat.n_x
    dt = lat.T / lat.n_t
    out = np.empty((lat.n_t + 1, N + 1))
    term = terminal(x) if callable(terminal) else terminal
    out[-1] = check_finite(np.broadcast_to(np.asarray(term, dtype=float), x.shape), "terminal")
    dirichlet = isinstance(boundary, Dirichlet)
    if dirichlet:
        out[-1, 0] = boundary.lo(tl[-1])
        out[-1, -1] = boundary.hi(tl[-1])
    a0, b0, aN, bN = _linear_extrapolation(lat)

    def rows(op):
        # interior rows of B = A - M diag(pot), as stencils on (k-1, k, k+1)
        (al, ad, au), (ml, md, mu), pt = op
        return (al[1:-1] - ml[1:-1] * pt[:-2], ad[1:-1] - md[1:-1] * pt[1:-1], au[1:-1] - mu[1:-1] * pt[2:]), \
            (ml[1:-1], md[1:-1], mu[1:-1])

    def apply(st, f):
        return st[0] * f[:-2] + st[1] * f[1:-1] + st[2] * f[2:]

    op_next = _operator(lat, drift, vol, potential, tl[-1], lat.n_t, compact)
    src_next = _field(source, tl[-1], x, lat.n_t)
    for n in range(lat.n_t - 1, -1, -1):
        th = 1.0 if (lat.n_t - 1 - n) < implicit_steps else theta
        B1, M1 = rows(op_next)
        op0 = _operator(lat, drift, vol, potential, tl[n], n, compact)
        B0, M0 = rows(op0)
        src0 = _field(source, tl[n], x, n)
        check_finite(src0, "source", t=tl[n])
        f1 = out[n + 1]
        if n == lat.n_t - 1 and start is not None:
            f1 = check_finite(np.broadcast_to(np.asarray(start, dtype=float), x.shape), "start")
            if dirichlet:
                f1 = f1.copy()
                f1[0], f1[-1] = out[-1, 0], out[-1, -1]
        rhs = apply(M0, f1) + (1 - th) * dt * apply(B1, f1) \
            - dt * (th * apply(M0, src0) + (1 - th) * apply(M1, src_next))
        L = M0[0] - th * dt * B0[0]
        D = M0[1] - th * dt * B0[1]
        U = M0[2] - th * dt * B0[2]
        if dirichlet:
            flo, fhi = boundary.lo(tl[n]), boundary.hi(tl[n])
            rhs[0] -= L[0] * flo
            rhs[-1] -= U[-1] * fhi
        else:
            # fold the affine extrapolation of the end values into the first and last rows
            D[0] += L[0] * a0
            U[0] += L[0] * b0
            D[-1] += U[-1] * aN
            L[-1] += U[-1] * bN
        L = L.copy()
        U = U.copy()
        L[0] = 0.0
        U[-1] = 0.0
        inner = _solve_tridiag(L, D, U, rhs, n)
        out[n, 1:-1] = inner
        if dirichlet:
            out[n, 0], out[n, -1] = flo, fhi
        else:
            out[n, 0] = a0 * inner[0] + b0 * inner[1]
            out[n, -1] = aN * inner[-1] + bN * inner[-2]
        op_next = op0
        src_next = src0
    return out


# --- the iteration ---------------------------------------------------------------------------

def _q_on_nodes(Q: GeneratorMatrix, x):
    if Q.is_constant:
        return np.broadcast_to(Q.matrix, (x.size, Q.p, Q.p))
    return Q.at(x)


def _boundary_for(problem: ProblemSpec, i: int, boundary):
    if problem.kind == "initial_boundary":
        dom = problem.domain
        return Dirichlet(lambda t: float(np.asarray(problem.psi_at(np.array([t]), np.array([dom.lo]),
                                                                     np.array([i]))).ravel()[0]),
                         lambda t: float(np.asarray(problem.psi_at(np.array([t]), np.array([dom.hi]),
                                                                     np.array([i]))).ravel()[0]))
    if boundary is None or boundary == "linear":
        return Linear()
    if boundary == "call_asymptotic":
        K = getattr(problem.payoff, "strike", None)
        if K is None:
            raise InvalidProblem("call-asymptotic boundary needs a call payoff")
        return "call_asymptotic"
    if isinstance(boundary, (Dirichlet, Linear)):
        return boundary
    raise ValueError(f"unknown boundary treatment {boundary!r}")


def iterate_system(problem: ProblemSpec, coefficients: GeneralCoefficients, Q: GeneratorMatrix, m_max: int,
                   lattice: Lattice, variant: str = "w", theta: float = 0.5, boundary=None,
                   regime_order: Sequence[int] | None = None, smoothing: str = "kreiss") -> list[GridSolution]:
    """Iterates 0..m_max, each from p independent solves fed by the previous iterate.

    ``boundary`` for half-line problems: ``"linear"`` (default) or
    ``"call_asymptotic"`` (0 at x_lo, x - K e^{-r (T - t)} at x_hi with the
    regime's own rate); interval problems always use Dirichlet data psi.
    ``smoothing="kreiss"`` starts each sweep from :func:`smoothed_terminal`
    when the payoff declares kinks inside the lattice; ``"none"`` disables it.
    """
    if smoothing not in ("kreiss", "none"):
        raise ValueError("smoothing must be 'kreiss' or 'none'")
    if variant not in ("w", "u"):
        raise ValueError("variant must be 'w' or 'u'")
    if coefficients.p != Q.p:
        raise InvalidProblem("coefficients and generator disagree on the number of regimes")
    if abs(lattice.T - problem.horizon) > 1e-12 * problem.horizon:
        raise InvalidProblem("lattice horizon differs from the problem horizon")
    if problem.kind == "initial_boundary":
        dom = problem.domain
        if abs(lattice.x_lo - dom.lo) > 1e-12 * max(1.0, abs(dom.lo)) or \
                abs(lattice.x_hi - dom.hi) > 1e-12 * max(1.0, abs(dom.hi)):
            raise InvalidProblem("an interval problem needs the lattice to span exactly the domain")
        problem.check_compatibility(Q.p, tol=1e-8)
    p = Q.p
    x = lattice.x
    tl = lattice.t
    qn = _q_on_nodes(Q, x)                         # (n_x + 1, p, p)
    order = list(range(p)) if regime_order is None else list(regime_order)
    if sorted(order) != list(range(p)):
        raise ValueError("regime_order must be a permutation of the regimes")
    tt, xx = np.meshgrid(tl, x, indexing="ij")
    phi = [problem.phi_at(tt, xx, np.full(tt.shape, i)) for i in range(p)]
    kinks = [k for k in getattr(problem.payoff, "kinks", ()) if lattice.x_lo < k < lattice.x_hi]
    terminal = [problem.g(x, np.full(x.shape, i)) for i in range(p)]
    start = [None] * p
    if smoothing == "kreiss" and kinks:
        start = [smoothed_terminal(lattice, (lambda ii: lambda xs: problem.g(xs, np.full(np.shape(xs), ii)))(i), kinks)
                 for i in range(p)]
    sols = []
    prev = None
    for m in range(m_max + 1):
        vals = np.empty((p, tl.size, x.size))
        for i in order:
            qii = qn[:, i, i]
            r_i = coefficients.rate[i]
            if m == 0 and variant == "w":
                pot = r_i
            else:
                pot = (lambda ri, q: (lambda t, xs: np.asarray(ri(t, xs), dtype=float) - q))(r_i, qii)
            src = phi[i].copy()
            if m > 0:
                for j in range(p):
                    if j != i:
                        src -= qn[:, i, j][None, :] * prev[j]
            bnd = _boundary_for(problem, i, boundary)
            if bnd == "call_asymptotic":
                K = problem.payoff.strike
                rr = float(np.asarray(r_i(np.array([0.0]), np.array([1.0]))).ravel()[0])
                bnd = Dirichlet(lambda t: 0.0,
                                (lambda rr_: (lambda t: lattice.x_hi - K * math.exp(-rr_ * (problem.horizon - t))))(rr))
            vals[i] = solve_single_regime(coefficients.drift[i], coefficients.vol[i], pot, src,
                                          terminal[i], bnd, lattice, theta, start=start[i])
        label = "dirichlet" if problem.kind == "initial_boundary" else (
            boundary if isinstance(boundary, str) else "linear")
        sols.append(GridSolution(vals, lattice, m, variant, label))
        prev = vals
    return sols


def evaluate(solution: GridSolution, t, x, i: int):
    """Linear interpolation in physical x and in t."""
    lat = solution.lattice
    xs = lat.x
    tl = lat.t
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    tol = 1e-12
    if np.any(x < xs[0] - tol * abs(xs[0])) or np.any(x > xs[-1] + tol * abs(xs[-1])) \
            or np.any(t < -tol) or np.any(t > lat.T * (1 + tol)):
        raise OutOfHull(f"query outside the lattice hull x in [{xs[0]:g}, {xs[-1]:g}], t in [0, {lat.T:g}]")
    t, x = np.broadcast_arrays(t, x)
    V = solution.values[i]
    kx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
    wx = np.clip((x - xs[kx]) / (xs[kx + 1] - xs[kx]), 0.0, 1.0)
    kt = np.clip(np.searchsorted(tl, t, side="right") - 1, 0, tl.size - 2)
    wt = np.clip((t - tl[kt]) / (tl[kt + 1] - tl[kt]), 0.0, 1.0)
    v0 = V[kt, kx] * (1 - wx) + V[kt, kx + 1] * wx
    v1 = V[kt + 1, kx] * (1 - wx) + V[kt + 1, kx + 1] * wx
    out = v0 * (1 - wt) + v1 * wt
    # exact node hits return the stored value bit for bit
    out = np.where(wx == 0, np.where(wt == 0, V[kt, kx], out), out)
    return out[()] if out.ndim == 0 else out


def export_csv(solution: GridSolution, path, meta_line: str = "") -> None:
    """Rows (m, regime, t, x, value) with regimes labelled 1..p."""
    lat = solution.lattice
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "regime", "t", "x", "value"])
        if meta_line:
            fh.write("# " + meta_line + "\n")
        for i in range(solution.p):
            for a, t in enumerate(lat.t):
                for b, x in enumerate(lat.x):
                    w.writerow([solution.m, i + 1, f"{t:.17g}", f"{x:.17g}", f"{solution.values[i, a, b]:.17g}"])
