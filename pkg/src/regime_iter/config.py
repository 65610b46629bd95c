"""Run configuration: a sectioned key = value file read with :mod:`configparser`.

Sections: ``[model]``, ``[problem]``, ``[method]``, ``[bounds]``,
``[oracle]``, ``[report]``, ``[output]`` and ``[run]``.  Regimes are numbered
from 1 in the file and in every emitted CSV; the library itself is 0-based.
Lists use commas, matrix rows are separated by ``;``.  Coefficients of a
general model are expressions in ``t`` and ``x`` (see :mod:`regime_iter.expr`),
given per regime as ``drift.1 = ...`` or for all regimes as ``drift = ...``.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import TruncationGrid
from .errors import ConfigError, RegimeIterError
from .expr import Expression, ExpressionError
from .fd_solver import Lattice
from .gbm_semianalytic import QuadratureSpec
from .mc_oracle import SchemeSettings
from .model import (CallPayoff, FunctionPayoff, GbmRegimeModel, GeneralCoefficients, GeneralModel,
                    GeneratorMatrix, HalfLine, Interval, ProblemSpec)

METHODS = ("semianalytic", "fd", "oracle")


def split_top(text: str, sep: str = ",") -> list[str]:
    """Split on ``sep`` outside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur).strip())
    return [p for p in parts if p != ""]


class _Section:
    """Typed access to one section; every error names ``section.key``."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}
        self.used = set()

    def key(self, k):
        return f"{self.name}.{k}"

    def has(self, k) -> bool:
        return k in self.data

    def raw(self, k, default=None, required=False, what=None):
        if k not in self.data:
            if required:
                raise ConfigError(f"missing required key {what or self.key(k)}", key=k)
            return default
        self.used.add(k)
        return self.data[k].strip()

    def float(self, k, default=None, required=False, what=None):
        v = self.raw(k, None, required, what)
        if v is None:
            return default
        try:
            return float(Expression(v).value())
        except (ExpressionError, ValueError):
            raise ConfigError(f"{what or self.key(k)} must be a number, got {v!r}", key=k) from None

    def int(self, k, default=None, required=False):
        v = self.raw(k, None, required)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{self.key(k)} must be an integer, got {v!r}", key=k) from None

    def choice(self, k, options, default=None, required=False):
        v = self.raw(k, None, required)
        if v is None:
            return default
        v = v.lower()
        if v not in options:
            raise ConfigError(f"{self.key(k)} must be one of {', '.join(options)}, got {v!r}", key=k)
        return v

    def floats(self, k, default=None, required=False):
        v = self.raw(k, None, required)
        if v is None:
            return default
        try:
            return [float(Expression(s).value()) for s in split_top(v)]
        except (ExpressionError, ValueError):
            raise ConfigError(f"{self.key(k)} must be a comma-separated list of numbers", key=k) from None

    def ints(self, k, default=None):
        v = self.raw(k, None)
        if v is None:
            return default
        try:
            return [int(s) for s in split_top(v)]
        except ValueError:
            raise ConfigError(f"{self.key(k)} must be a comma-separated list of integers", key=k) from None

    def expr(self, k, default=None, required=False):
        v = self.raw(k, None, required)
        if v is None:
            return default
        try:
            return Expression(v)
        except ExpressionError as exc:
            raise ConfigError(f"{self.key(k)}: {exc}", key=k) from None

    def bool(self, k, default=False):
        v = self.raw(k, None)
        if v is None:
            return default
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self.key(k)} must be true or false", key=k)

    def per_regime(self, k, p, required=True):
        """Expressions ``k.1`` ... ``k.p``, falling back to a shared ``k``."""
        out = []
        for i in range(1, p + 1):
            e = self.expr(f"{k}.{i}") if self.has(f"{k}.{i}") else self.expr(k, required=required)
            out.append(e)
        return out

    def unknown(self):
        return sorted(set(self.data) - self.used)


def _grid(spec: str, key: str) -> np.ndarray:
    """``lo:hi:n`` (inclusive, n points) or an explicit comma list."""
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            return np.linspace(float(lo), float(hi), int(n))
        return np.array([float(s) for s in split_top(spec)])
    except ValueError:
        raise ConfigError(f"{key} must be 'lo:hi:n' or a list of numbers, got {spec!r}", key=key) from None


def _as_fields(exprs):
    return [(lambda e: lambda t, x: np.asarray(e(t, x), dtype=float))(e) for e in exprs]


def _regime_fn(exprs):
    """Per-regime expressions as one ``f(t, x, regimes)`` over path arrays."""

    def fn(t, x, regimes):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        regimes = np.asarray(regimes)
        shape = np.broadcast(t, x, regimes).shape
        t, x, regimes = (np.broadcast_to(a, shape) for a in (t, x, regimes))
        out = np.empty(shape)
        for i in np.unique(regimes):
            sel = regimes == i
            out[sel] = exprs[int(i)](t[sel], x[sel])
        return out

    return fn


@dataclass
class RunConfig:
    path: Path | None
    text: str
    model: object
    Q: GeneratorMatrix
    coefficients: GeneralCoefficients
    problem: ProblemSpec
    method: str
    m_max: int
    variant: str
    quad: QuadratureSpec
    lattice: Lattice
    fd_options: dict
    scheme: SchemeSettings
    n_paths: int
    truncation: TruncationGrid
    oracle_points: list
    oracle_targets: list
    report_m: list
    report_x: np.ndarray
    report_t: float
    out_dir: str
    float_format: str
    seed: int | None
    rate_constants: list | None = None
    extra: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.Q.p

    @property
    def is_gbm(self) -> bool:
        return isinstance(self.model, GbmRegimeModel)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]


def _parse_Q(sec: _Section, p: int):
    rows = sec.raw("q", required=True)
    entries = [split_top(r) for r in rows.split(";") if r.strip()]
    if len(entries) != p or any(len(r) != p for r in entries):
        raise ConfigError(f"model.q must be a {p} x {p} matrix (rows separated by ';')", key="q")
    try:
        exprs = [[Expression(e) for e in r] for r in entries]
    except ExpressionError as exc:
        raise ConfigError(f"model.q: {exc}", key="q") from None
    if any("t" in e.variables for r in exprs for e in r):
        raise ConfigError("model.q entries may depend on x only", key="q")
    bound = sec.float("q_bound")
    if all(e.is_constant for r in exprs for e in r):
        return GeneratorMatrix(np.array([[e.value() for e in r] for r in exprs]), bound=bound)
    rate_bound = sec.float("rate_bound", required=True, what="model.rate_bound (needed for a state-dependent q)")

    def q_of_x(x):
        x = np.asarray(x, dtype=float)
        out = np.empty((x.size, p, p))
        for a in range(p):
            for b in range(p):
                out[:, a, b] = exprs[a][b](0.0, x)
        return out

    return GeneratorMatrix(q_of_x, rate_bound=rate_bound, bound=bound)


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse and validate a run configuration.  Raises :class:`ConfigError` naming the key."""
    if text is None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}", key="config") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}",
                          key="config") from None
    for s in ("model", "problem"):
        if not parser.has_section(s):
            raise ConfigError(f"missing section [{s}]", key=s)
    try:
        return _build(parser, text, path)
    except RegimeIterError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), key="model") from None


def _build(parser, text, path) -> RunConfig:
    ms = _Section(parser, "model")
    p = ms.int("regimes", required=True)
    if p < 1:
        raise ConfigError("model.regimes must be at least 1", key="regimes")
    Q = _parse_Q(ms, p)
    kind = ms.choice("type", ("gbm", "general"), "gbm")
    rates = None
    if kind == "gbm":
        def vec(k, default=None):
            v = ms.floats(k, default, required=default is None)
            if len(v) == 1:
                v = v * p
            if len(v) != p:
                raise ConfigError(f"model.{k} needs {p} values", key=k)
            return v
        if not Q.is_constant:
            raise ConfigError("model.q must be constant for a gbm model", key="q")
        model = GbmRegimeModel(Q, vec("r"), vec("sigma"), vec("alpha", [0.0]))
        coeffs = model.coefficients()
        rates = [float(v) for v in model.r]
    else:
        drift = ms.per_regime("drift", p)
        vol = ms.per_regime("vol", p)
        rate = ms.per_regime("rate", p)
        const_rate = all(e.is_constant for e in rate)
        coeffs = GeneralCoefficients(_as_fields(drift), _as_fields(vol), _as_fields(rate),
                                     rate_depends_on_state=not const_rate,
                                     rate_bound=ms.float("rate_bound"))
        model = GeneralModel(Q, coeffs)
        if const_rate:
            rates = [e.value() for e in rate]

    ps = _Section(parser, "problem")
    T = ps.float("horizon", required=True, what="problem.horizon")
    if not T > 0:
        raise ConfigError("problem.horizon must be positive", key="horizon")
    pkind = ps.choice("kind", ("initial_value", "initial_boundary"), "initial_value")
    if pkind == "initial_boundary":
        lo = ps.float("lo", required=True)
        hi = ps.float("hi", required=True)
        if not lo < hi:
            raise ConfigError("problem.lo must be below problem.hi", key="lo")
        domain = Interval(lo, hi)
    else:
        domain = HalfLine()
    ptype = ps.choice("payoff", ("call", "expression"), "call")
    if ptype == "call":
        K = ps.float("strike", required=True)
        if not K > 0:
            raise ConfigError("problem.strike must be positive", key="strike")
        payoff = CallPayoff(K)
    else:
        g = ps.per_regime("g", p)
        if any("t" in e.variables for e in g):
            raise ConfigError("problem.g may depend on x only", key="g")
        payoff = FunctionPayoff((lambda gs: lambda x, i=0: gs[int(i)](0.0, x))(g), kinks=ps.floats("kinks", []),
                                regime_independent=all(e.source == g[0].source for e in g))
    phi = None
    if ps.has("phi") or any(ps.has(f"phi.{i}") for i in range(1, p + 1)):
        phi = _regime_fn(ps.per_regime("phi", p))
    psi = None
    if pkind == "initial_boundary":
        psi = _regime_fn(ps.per_regime("psi", p))
    problem = ProblemSpec(T, payoff, pkind, domain, phi, psi)
    if pkind == "initial_boundary":
        try:
            problem.check_compatibility(p, tol=1e-8)
        except RegimeIterError as exc:
            raise ConfigError(f"problem.psi: {exc}", key="psi") from None

    me = _Section(parser, "method")
    method = me.choice("name", METHODS, "semianalytic")
    if method == "semianalytic" and kind != "gbm":
        raise ConfigError("method.name = semianalytic needs model.type = gbm", key="name")
    if method == "semianalytic" and pkind != "initial_value":
        raise ConfigError("method.name = semianalytic handles initial-value problems only", key="name")
    m_max = me.int("m_max", 3)
    if m_max < 0:
        raise ConfigError("method.m_max must be nonnegative", key="m_max")
    variant = me.choice("variant", ("w", "u"), "w")
    try:
        quad = QuadratureSpec(hermite_nodes=me.int("hermite_nodes", 64), legendre_nodes=me.int("legendre_nodes", 48),
                              path_samples=me.int("path_samples", 4096),
                              sampling=me.choice("sampling", ("rqmc", "mc"), "rqmc"),
                              replicates=me.int("replicates", 16))
    except ValueError as exc:
        raise ConfigError(f"method quadrature settings: {exc}", key="path_samples") from None
    if pkind == "initial_boundary":
        lat_default = (domain.lo, domain.hi, "identity")
    else:
        K = getattr(payoff, "strike", 1.0)
        lat_default = (0.05 * K, 20.0 * K, "log")
    try:
        lattice = Lattice(me.float("x_lo", lat_default[0]), me.float("x_hi", lat_default[1]), me.int("n_x", 400), T,
                          me.int("n_t", 400), me.choice("transform", ("log", "identity"), lat_default[2]))
    except ValueError as exc:
        raise ConfigError(f"method lattice: {exc}", key="n_x") from None
    fd_options = {
        "theta": me.float("theta", 0.5),
        "boundary": me.choice("boundary", ("linear", "call_asymptotic"), "linear"),
        "smoothing": me.choice("smoothing", ("kreiss", "none"), "kreiss"),
    }
    if not 0 <= fd_options["theta"] <= 1:
        raise ConfigError("method.theta must lie in [0, 1]", key="theta")
    try:
        scheme = SchemeSettings(me.choice("scheme", ("exact", "euler"), "exact" if kind == "gbm" else "euler"),
                                me.float("h", 1e-3), me.int("chunk", 65536))
    except ValueError as exc:
        raise ConfigError(f"method scheme settings: {exc}", key="scheme") from None
    if scheme.scheme == "exact" and kind != "gbm":
        raise ConfigError("method.scheme = exact needs a gbm model", key="scheme")
    n_paths = me.int("n_paths", 100_000)
    if n_paths < 2:
        raise ConfigError("method.n_paths must be at least 2", key="n_paths")

    bs = _Section(parser, "bounds")
    K = getattr(payoff, "strike", 1.0)
    try:
        trunc = TruncationGrid(bs.float("x_lo", 0.25 * K), bs.float("x_hi", 4.0 * K), bs.int("n_x", 501),
                               bs.int("n_t", 101))
    except ValueError as exc:
        raise ConfigError(f"bounds grid: {exc}", key="x_lo") from None

    os_ = _Section(parser, "oracle")
    pts = []
    for item in split_top(os_.raw("points", "0:1:1"), ";"):
        bits = item.split(":")
        try:
            t0, x0, i0 = float(bits[0]), float(bits[1]), int(bits[2])
        except (ValueError, IndexError):
            raise ConfigError(f"oracle.points entries are t:x:regime, got {item!r}", key="points") from None
        if not 1 <= i0 <= p:
            raise ConfigError(f"oracle.points regime {i0} is outside 1..{p}", key="points")
        if not 0 <= t0 <= T:
            raise ConfigError(f"oracle.points time {t0} is outside [0, horizon]", key="points")
        pts.append((t0, x0, i0 - 1))
    targets = [s.lower() for s in split_top(os_.raw("targets", "v"))]
    for tg in targets:
        if not (tg == "v" or (tg[:1] in ("w", "u") and tg[1:].isdigit())):
            raise ConfigError(f"oracle.targets entries are v, w<m> or u<m>, got {tg!r}", key="targets")
    if pkind == "initial_boundary" and any(tg != "v" for tg in targets):
        raise ConfigError("initial-boundary problems support oracle target v only", key="targets")

    rs = _Section(parser, "report")
    report_m = rs.ints("m", list(range(min(m_max, 3) + 1)))
    if any(m < 0 or m > m_max for m in report_m):
        raise ConfigError(f"report.m entries must lie in 0..{m_max} (method.m_max)", key="m")
    report_x = _grid(rs.raw("x", f"{trunc.x_lo}:{trunc.x_hi}:31"), "report.x")
    report_t = rs.float("t", 0.0)

    out = _Section(parser, "output")
    run = _Section(parser, "run")
    seed = run.raw("seed")
    if seed is not None:
        try:
            seed = int(seed, 0)
        except ValueError:
            raise ConfigError(f"run.seed must be an integer, got {seed!r}", key="seed") from None
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("run.seed must fit in an unsigned 64-bit integer", key="seed")
    levels = out.raw("t_levels", "0")
    t_levels = "all" if levels.lower() == "all" else _grid(levels, "output.t_levels")
    fmt = out.raw("float_format", "%.17g")
    try:
        fmt % 1.0
    except (TypeError, ValueError):
        raise ConfigError(f"output.float_format {fmt!r} is not a printf float format", key="float_format") from None
    return RunConfig(Path(path) if path else None, text, model, Q, coeffs, problem, method, m_max, variant, quad,
                     lattice, fd_options, scheme, n_paths, trunc, pts, targets, report_m, report_x, report_t,
                     out.raw("directory", "out"), fmt, seed, rates, {"t_levels": t_levels})
