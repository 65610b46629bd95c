"""Problem description: regimes, generator matrix, coefficients, payoff, domain.

Regimes are 0-based in the Python API (``0 .. p-1``).  Configuration files and
CSV artifacts use the 1-based labels ``1 .. p``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AbsorbingRegime, InvalidProblem, NonFiniteValue

ROW_SUM_TOL_CONST = 1e-12
ROW_SUM_TOL_EVAL = 1e-10


def check_finite(values, what: str, **where) -> np.ndarray:
    """Raise :class:`NonFiniteValue` with location info if ``values`` has NaN/inf."""
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.flatnonzero(bad.ravel())[0]
        loc = ", ".join(f"{k}={_pick(v, idx)}" for k, v in where.items())
        raise NonFiniteValue(f"{what} returned {values.ravel()[idx]!r}" + (f" at {loc}" if loc else ""))
    return values


def _pick(v, idx):
    a = np.asarray(v)
    if a.ndim == 0:
        return a.item()
    return a.ravel()[idx % a.size].item()


class GeneratorMatrix:
    """Transition-rate matrix of the regime chain.

    ``entries`` is either a constant ``p x p`` array or a callable mapping a
    1-D array of states ``x`` (shape ``(n,)``) to rates of shape ``(n, p, p)``.
    A state-dependent generator must declare ``rate_bound``, an upper bound on
    every off-diagonal entry; it is trusted and spot-checked at probe states.
    ``bound`` is the declared bound on all entries in magnitude (clause (c)).
    """

    def __init__(self, entries, rate_bound: float | None = None, bound: float | None = None):
        if callable(entries):
            if rate_bound is None:
                raise InvalidProblem("state-dependent generator needs a declared rate_bound")
            self._fn = entries
            self._const = None
            probe = np.asarray(entries(np.array([1.0])), dtype=float)
            if probe.ndim != 3 or probe.shape[1] != probe.shape[2]:
                raise InvalidProblem("generator callback must return shape (n, p, p)")
            self.p = probe.shape[1]
            self.rate_bound = float(rate_bound)
        else:
            q = np.array(entries, dtype=float)
            if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
                raise InvalidProblem(f"generator must be square, got shape {q.shape}")
            q.setflags(write=False)
            self._fn = None
            self._const = q
            self.p = q.shape[0]
            off = q[~np.eye(self.p, dtype=bool)]
            computed = float(off.max()) if off.size else 0.0
            self.rate_bound = computed if rate_bound is None else float(rate_bound)
        self.bound = None if bound is None else float(bound)

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    @property
    def matrix(self) -> np.ndarray:
        if self._const is None:
            raise TypeError("state-dependent generator has no constant matrix")
        return self._const

    def at(self, x) -> np.ndarray:
        """Rates at states ``x``: shape ``(p, p)`` for a scalar, ``(n, p, p)`` for an array."""
        xa = np.asarray(x, dtype=float)
        if self._const is not None:
            if xa.ndim == 0:
                return self._const
            return np.broadcast_to(self._const, xa.shape + self._const.shape)
        flat = np.atleast_1d(xa).ravel()
        q = np.asarray(self._fn(flat), dtype=float)
        check_finite(q, "generator", x=np.repeat(flat, self.p * self.p))
        if xa.ndim == 0:
            return q[0]
        return q.reshape(xa.shape + (self.p, self.p))

    def scaled(self, gamma: float) -> "GeneratorMatrix":
        if self._const is not None:
            return GeneratorMatrix(gamma * self._const, bound=None if self.bound is None else gamma * self.bound)
        fn = self._fn
        return GeneratorMatrix(lambda x: gamma * np.asarray(fn(x)), rate_bound=gamma * self.rate_bound,
                               bound=None if self.bound is None else gamma * self.bound)

    def __repr__(self):
        if self._const is not None:
            return f"GeneratorMatrix({self._const.tolist()})"
        return f"GeneratorMatrix(<state-dependent p={self.p}>, rate_bound={self.rate_bound})"


@dataclass(frozen=True)
class Violation:
    clause: str          # "a", "b", "c" or "rate_bound"
    row: int
    col: int | None
    state: float | None
    value: float
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def clauses(self) -> set[str]:
        return {v.clause for v in self.violations}

    def __bool__(self):
        return self.ok


def validate_generator(Q: GeneratorMatrix, probe_states: Sequence[float] = ()) -> ValidationReport:
    """Check the q-property: (a) off-diagonals >= 0, (b) zero row sums, (c) bounded entries.

    Violations are collected, never raised.
    """
    if Q.is_constant:
        mats = Q.matrix[None]
        states: list[float | None] = [None]
        tol = ROW_SUM_TOL_CONST
    else:
        if len(probe_states) == 0:
            raise ValueError("probe_states must be nonempty for a state-dependent generator")
        states = [float(s) for s in probe_states]
        mats = Q.at(np.array(states))
        tol = ROW_SUM_TOL_EVAL
    found: list[Violation] = []
    p = Q.p
    for q, s in zip(mats, states):
        for a in range(p):
            for b in range(p):
                if a != b and q[a, b] < 0:
                    found.append(Violation("a", a, b, s, float(q[a, b]),
                                           f"q[{a + 1},{b + 1}] = {q[a, b]:g} is negative"))
                if a != b and q[a, b] > Q.rate_bound * (1 + 1e-12) + 1e-300:
                    found.append(Violation("rate_bound", a, b, s, float(q[a, b]),
                                           f"q[{a + 1},{b + 1}] = {q[a, b]:g} exceeds rate_bound {Q.rate_bound:g}"))
                if Q.bound is not None and abs(q[a, b]) > Q.bound:
                    found.append(Violation("c", a, b, s, float(q[a, b]),
                                           f"|q[{a + 1},{b + 1}]| = {abs(q[a, b]):g} exceeds declared bound {Q.bound:g}"))
            rs = float(q[a].sum())
            if abs(rs) > tol:
                found.append(Violation("b", a, None, s, rs, f"row {a + 1} sums to {rs:g}"))
        if not np.all(np.isfinite(q)):
            found.append(Violation("c", -1, None, s, float("nan"), "non-finite entry"))
    return ValidationReport(tuple(found))


def jump_distribution(Q: GeneratorMatrix, i: int, x: float = 0.0) -> np.ndarray:
    """Destination probabilities after leaving regime ``i`` at state ``x``.

    Returns a length-``p`` vector with a structural zero at ``i``.
    """
    q = Q.at(x) if not Q.is_constant else Q.matrix
    total = -q[i, i]
    if not total > 0:
        raise AbsorbingRegime(f"regime {i} has zero exit rate at x={x}")
    probs = np.where(np.arange(Q.p) == i, 0.0, q[i] / total)
    return probs


# --- payoffs ---------------------------------------------------------------

class CallPayoff:
    """(x - K)_+ for every regime.  Recognised by the closed-form fast paths."""

    def __init__(self, strike: float):
        if not strike > 0:
            raise InvalidProblem("strike must be positive")
        self.strike = float(strike)
        self.kinks = (self.strike,)

    def __call__(self, x, i=None):
        return np.maximum(np.asarray(x, dtype=float) - self.strike, 0.0)

    def __repr__(self):
        return f"CallPayoff({self.strike})"


class FunctionPayoff:
    """Wrap ``g(x, i)``; ``kinks`` lists x-locations where g is not smooth."""

    def __init__(self, fn: Callable, kinks: Sequence[float] = (), regime_independent: bool = False):
        self.fn = fn
        self.kinks = tuple(float(k) for k in kinks)
        self.regime_independent = regime_independent

    def __call__(self, x, i=0):
        return np.asarray(self.fn(np.asarray(x, dtype=float), i), dtype=float) * np.ones_like(x, dtype=float)


def as_payoff(g) -> CallPayoff | FunctionPayoff:
    if isinstance(g, (CallPayoff, FunctionPayoff)):
        return g
    if callable(g):
        return FunctionPayoff(g)
    raise TypeError(f"payoff must be callable, got {type(g).__name__}")


# --- coefficients -------------------------------------------------------------

@dataclass(frozen=True)
class GbmRegimeModel:
    """Regime-switching GBM  dX = (r_R - alpha_R) X dt + sigma_R X dW with constant Q."""

    Q: GeneratorMatrix
    r: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if not self.Q.is_constant:
            raise InvalidProblem("GBM model requires a constant generator")
        p = self.Q.p
        r, s, a = (np.array(np.broadcast_to(np.asarray(v, dtype=float), (p,)) if np.size(v) == 1
                            else np.asarray(v, dtype=float).ravel())
                   for v in (self.r, self.sigma, self.alpha))
        for name, arr in (("r", r), ("sigma", s), ("alpha", a)):
            if arr.size != p:
                raise InvalidProblem(f"{name} has {arr.size} entries, expected {p}")
        if np.any(s <= 0):
            raise InvalidProblem("every sigma_i must be positive")
        for name, arr in (("r", r), ("sigma", s), ("alpha", a)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.Q.p

    @property
    def rate_regime_independent(self) -> bool:
        return bool(np.all(self.r == self.r[0]))

    def coefficients(self) -> "GeneralCoefficients":
        r, s, a = self.r, self.sigma, self.alpha
        return GeneralCoefficients(
            drift=[_lin(r[i] - a[i]) for i in range(self.p)],
            vol=[_lin(s[i]) for i in range(self.p)],
            rate=[_const(r[i]) for i in range(self.p)],
            rate_depends_on_state=False,
            rate_bound=float(np.max(np.abs(r))),
        )


def _lin(c):
    return lambda t, x: c * np.asarray(x, dtype=float)


def _const(c):
    return lambda t, x: np.full(np.shape(np.asarray(x, dtype=float) + np.asarray(t, dtype=float)), c, dtype=float)


def _zero(t, x):
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)


@dataclass(frozen=True)
class GeneralCoefficients:
    """Per-regime fields ``f[i](t, x)``, each vectorised over numpy arrays.

    ``phi`` defaults to zero in every regime.  ``rate_depends_on_state`` tells
    the bound machinery whether the discount rate varies with x.
    """

    drift: Sequence[Callable]
    vol: Sequence[Callable]
    rate: Sequence[Callable]
    phi: Sequence[Callable] | None = None
    rate_depends_on_state: bool = True
    rate_bound: float | None = None

    def __post_init__(self):
        p = len(self.drift)
        if len(self.vol) != p or len(self.rate) != p:
            raise InvalidProblem("drift, vol and rate need one entry per regime")
        if self.phi is None:
            object.__setattr__(self, "phi", [_zero] * p)
        elif len(self.phi) != p:
            raise InvalidProblem("phi needs one entry per regime")

    @property
    def p(self) -> int:
        return len(self.drift)

    def eval(self, name: str, t, x, regimes) -> np.ndarray:
        """Evaluate field ``name`` at per-path arrays ``t``, ``x`` and integer ``regimes``."""
        fns = getattr(self, name)
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        regimes = np.asarray(regimes)
        shape = np.broadcast(t, x, regimes).shape
        t, x, regimes = (np.broadcast_to(a, shape) for a in (t, x, regimes))
        out = np.empty(shape)
        for i in np.unique(regimes):
            sel = regimes == i
            out[sel] = np.broadcast_to(np.asarray(fns[int(i)](t[sel], x[sel]), dtype=float), (int(sel.sum()),))
        return check_finite(out, f"field {name}", t=t, x=x, regime=regimes)


# --- problem -------------------------------------------------------------------

@dataclass(frozen=True)
class HalfLine:
    """D = (0, inf)."""

    def contains(self, x):
        return np.asarray(x) > 0


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidProblem(f"interval needs lo < hi, got ({self.lo}, {self.hi})")

    def contains(self, x):
        x = np.asarray(x)
        return (x > self.lo) & (x < self.hi)


@dataclass(frozen=True)
class ProblemSpec:
    """Terminal payoff ``g(x, i)``, heat source ``phi(t, x, i)``, boundary data ``psi(t, x, i)``.

    ``phi`` and ``psi`` take per-path arrays and an integer regime array.
    """

    horizon: float
    payoff: Callable
    kind: str = "initial_value"
    domain: HalfLine | Interval = field(default_factory=HalfLine)
    phi: Callable | None = None
    psi: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("initial_value", "initial_boundary"):
            raise InvalidProblem(f"unknown problem kind {self.kind!r}")
        if not self.horizon > 0:
            raise InvalidProblem("horizon T must be positive")
        object.__setattr__(self, "payoff", as_payoff(self.payoff))
        if self.kind == "initial_boundary":
            if not isinstance(self.domain, Interval):
                raise InvalidProblem("an initial-boundary problem needs a bounded interval domain")
            if self.psi is None:
                raise InvalidProblem("an initial-boundary problem needs boundary data psi")

    @property
    def has_phi(self) -> bool:
        return self.phi is not None

    def g(self, x, regimes) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        regimes = np.broadcast_to(np.asarray(regimes), x.shape)
        out = np.empty(x.shape)
        for i in np.unique(regimes):
            sel = regimes == i
            out[sel] = self.payoff(x[sel], int(i))
        return check_finite(out, "payoff", x=x, regime=regimes)

    def phi_at(self, t, x, regimes) -> np.ndarray:
        if self.phi is None:
            return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)
        return check_finite(self.phi(t, x, regimes), "phi", t=t, x=x)

    def psi_at(self, t, x, regimes) -> np.ndarray:
        return check_finite(self.psi(t, x, regimes), "psi", t=t, x=x)

    def check_compatibility(self, p: int, tol: float = 1e-10) -> None:
        """g(x, i) = psi(T, x, i) on the boundary points."""
        if self.kind != "initial_boundary":
            return
        for b in (self.domain.lo, self.domain.hi):
            for i in range(p):
                gv = float(self.g(np.array([b]), np.array([i]))[0])
                pv = float(np.asarray(self.psi_at(np.array([self.horizon]), np.array([b]), np.array([i]))).ravel()[0])
                if abs(gv - pv) > tol * max(1.0, abs(gv)):
                    raise InvalidProblem(
                        f"payoff and boundary data disagree at x={b}, regime {i + 1}: g={gv:g}, psi(T)={pv:g}")


@dataclass(frozen=True)
class GeneralModel:
    """Switching diffusion with general per-regime coefficients."""

    Q: GeneratorMatrix
    coefficients: GeneralCoefficients

    def __post_init__(self):
        if self.coefficients.p != self.Q.p:
            raise InvalidProblem(f"coefficients define {self.coefficients.p} regimes, generator has {self.Q.p}")

    @property
    def p(self) -> int:
        return self.Q.p
