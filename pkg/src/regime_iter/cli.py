"""``regime-iter <command> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]``.

Commands: validate, solve, bounds, oracle, report.  Exit status 0 on
success, 1 for configuration errors, 2 for numerical failures.  Every CSV has
a header row and one ``#`` metadata line; regimes are labelled 1..p.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import _accel
from .bounds import (annuity, discounted_time_grid, hard_bounds, m_r_extrema, m_r_field, essential_extrema,
                     scalars_from_family)
from .config import RunConfig, load_config
from .errors import ConfigError, RegimeIterError
from .expr import ExpressionError
from .fd_solver import GridSolution, evaluate, iterate_system
from .model import validate_generator

COMMANDS = ("validate", "solve", "bounds", "oracle", "report")
THREADS_ENV = "REGIME_ITER_THREADS"


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="regime-iter", description="Restricted-switching iterates, hard bounds and Monte Carlo checks "
                                                 "for regime-switching diffusions.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="run configuration file")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--seed", help="64-bit seed (overrides run.seed)")
    ap.add_argument("--threads", help=f"worker threads (fallback: ${THREADS_ENV})")
    return ap


# --- output --------------------------------------------------------------------------------------

class Emitter:
    """Writes CSVs under one directory with a fixed float format and metadata line."""

    def __init__(self, directory: Path, fmt: str, meta: str):
        self.dir = Path(directory)
        self.fmt = fmt
        self.meta = meta
        self.written = []

    def cell(self, v):
        if isinstance(v, (float, np.floating)):
            return self.fmt % float(v)
        if isinstance(v, (np.integer,)):
            return str(int(v))
        return str(v)

    def write(self, name: str, header, rows) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        lines = [",".join(header), "# " + self.meta]
        lines += [",".join(self.cell(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n")
        self.written.append(path)
        return path


def _meta(cfg: RunConfig, seed) -> str:
    parts = [f"config_sha256={cfg.config_hash}", f"seed={'none' if seed is None else seed}",
             f"method={cfg.method}", f"variant={cfg.variant}",
             f"truncation=[{cfg.truncation.x_lo:g};{cfg.truncation.x_hi:g}]x{cfg.truncation.n_x}"
             f"/t{cfg.truncation.n_t}"]
    if cfg.method == "fd":
        lat = cfg.lattice
        parts.append(f"lattice={lat.transform}[{lat.x_lo:g};{lat.x_hi:g}]x{lat.n_x}/t{lat.n_t}"
                     f"/boundary={cfg.fd_options['boundary'] if cfg.problem.kind == 'initial_value' else 'dirichlet'}")
    if cfg.method == "oracle":
        parts.append(f"scheme={cfg.scheme.scheme}/h={cfg.scheme.h:g}/n_paths={cfg.n_paths}")
    return " ".join(parts)


def _require_seed(seed, why: str):
    if seed is None:
        raise ConfigError(f"run.seed is required for {why} (set [run] seed or pass --seed)", key="seed")
    return seed


def _fd_solutions(cfg: RunConfig, m_max=None):
    return iterate_system(cfg.problem, cfg.coefficients, cfg.Q, cfg.m_max if m_max is None else m_max,
                          cfg.lattice, cfg.variant, theta=cfg.fd_options["theta"],
                          boundary=cfg.fd_options["boundary"], smoothing=cfg.fd_options["smoothing"])


def _check_hull(cfg: RunConfig, x, key):
    lat = cfg.lattice
    x = np.asarray(x)
    if x.min() < lat.x_lo or x.max() > lat.x_hi:
        raise ConfigError(f"{key} points leave the lattice [{lat.x_lo:g}, {lat.x_hi:g}]", key=key)


def _fd_on_grid(sol: GridSolution, t_grid, x_grid):
    tt, xx = np.meshgrid(t_grid, x_grid, indexing="ij")
    return np.stack([evaluate(sol, tt, xx, i) for i in range(sol.p)])


def _family_on(cfg: RunConfig, seed, t_grid, x_grid, key):
    """Iterates 0..m_max of the configured variant on a (t, x) grid: list of (p, n_t, n_x)."""
    if cfg.method == "semianalytic":
        from .gbm_semianalytic import iterate_grid

        if cfg.m_max >= 3:
            _require_seed(seed, "sampled iterates (m_max >= 3)")
        it = iterate_grid(cfg.model, cfg.problem, t_grid, x_grid, cfg.m_max, cfg.quad, seed or 0,
                          T=cfg.problem.horizon)
        return it.family(cfg.variant), (it.w_stderr if cfg.variant == "w" else it.u_stderr)
    if cfg.method == "fd":
        _check_hull(cfg, x_grid, key)
        sols = _fd_solutions(cfg)
        fam = [_fd_on_grid(s, t_grid, x_grid) for s in sols]
        return fam, [np.zeros_like(f) for f in fam]
    raise ConfigError("this command needs method.name = semianalytic or fd", key="name")


# --- commands ------------------------------------------------------------------------------------

def cmd_validate(cfg: RunConfig, seed, em: Emitter) -> int:
    probes = cfg.truncation.x_points() if not cfg.Q.is_constant else ()
    rep = validate_generator(cfg.Q, probes)
    rows = [(v.clause, v.row + 1, "" if v.col is None else v.col + 1, "" if v.state is None else float(v.state),
             float(v.value), v.message.replace(",", ";")) for v in rep.violations]
    em.write("validation.csv", ["clause", "row", "col", "state", "value", "message"], rows)
    print(f"regimes: {cfg.p}; rate bound c = {cfg.Q.rate_bound:g}")
    if rep.ok:
        print("q-property: ok")
        return 0
    for v in rep.violations:
        print(f"q-property clause ({v.clause}) violated: {v.message}", file=sys.stderr)
    raise ConfigError("model.q violates the q-property", key="q")


def cmd_solve(cfg: RunConfig, seed, em: Emitter) -> int:
    if cfg.method == "oracle":
        return cmd_oracle(cfg, seed, em)
    name = cfg.variant
    if cfg.method == "semianalytic":
        t_grid = np.array([cfg.report_t]) if isinstance(cfg.extra["t_levels"], str) else cfg.extra["t_levels"]
        fam, err = _family_on(cfg, seed, t_grid, cfg.report_x, "report.x")
        rows = []
        for m in range(cfg.m_max + 1):
            for i in range(cfg.p):
                for a, t in enumerate(t_grid):
                    for b, x in enumerate(cfg.report_x):
                        rows.append((m, i + 1, float(t), float(x), float(fam[m][i, a, b]), float(err[m][i, a, b])))
        em.write("iterates.csv", ["m", "regime", "t", "x", name, "stderr"], rows)
        return 0
    sols = _fd_solutions(cfg)
    lat = cfg.lattice
    levels = cfg.extra["t_levels"]
    if isinstance(levels, str):
        idx = np.arange(lat.n_t + 1)
    else:
        idx = np.unique(np.clip(np.rint(np.asarray(levels) / lat.T * lat.n_t).astype(int), 0, lat.n_t))
    tl, xs = lat.t, lat.x
    for s in sols:
        rows = [(s.m, i + 1, float(tl[a]), float(xs[b]), float(s.values[i, a, b]))
                for i in range(cfg.p) for a in idx for b in range(xs.size)]
        em.write(f"fd_{name}{s.m}.csv", ["m", "regime", "t", "x", name], rows)
    return 0


def _bound_setup(cfg: RunConfig, seed):
    """Bound scalars from the truncation grid plus the discounted-time evaluator."""
    if cfg.problem.kind != "initial_value":
        raise ConfigError("bounds are implemented for initial-value problems only", key="kind")
    tr = cfg.truncation
    T = cfg.problem.horizon
    tp, xp = tr.t_points(T), tr.x_points()
    fam, _ = _family_on(cfg, seed, tp, xp, "bounds.x_lo")
    if cfg.rate_constants is not None and cfg.Q.is_constant:
        r = np.asarray(cfg.rate_constants)
        M_U, M_L = m_r_extrema(cfg.Q, r, T, tp)

        def disc(t, x, i):
            return annuity(r[i], np.maximum(T - np.asarray(t, dtype=float), 0.0)) * np.ones(np.shape(x))
    else:
        lat = cfg.lattice
        _check_hull(cfg, xp, "bounds.x_lo")
        D = discounted_time_grid(cfg.coefficients, lat)
        Dsol = GridSolution(D, lat, 0, "w", "linear")
        Msol = GridSolution(m_r_field(cfg.Q, D, lat.x), lat, 0, "w", "linear")
        M_U, M_L = essential_extrema(_fd_on_grid(Msol, tp, xp))

        def disc(t, x, i):
            return evaluate(Dsol, t, x, i)
    sc = scalars_from_family(fam, cfg.Q, cfg.m_max, M_U, M_L, tr, x=xp)
    return sc, disc


def _bands(cfg: RunConfig, seed, sc, disc):
    t = cfg.report_t
    fam, _ = _family_on(cfg, seed, np.array([t]), cfg.report_x, "report.x")
    out = {}
    for m in cfg.report_m:
        for i in range(cfg.p):
            f = fam[m][i, 0]
            L, U = hard_bounds(m, t, cfg.report_x, i, f, sc, discounted_time=disc(t, cfg.report_x, i))
            out[(m, i)] = (f, np.asarray(L), np.asarray(U))
    return out


def cmd_bounds(cfg: RunConfig, seed, em: Emitter) -> int:
    sc, disc = _bound_setup(cfg, seed)
    tr = cfg.truncation
    em.write("bound_scalars.csv", ["m", "N_L", "N_U", "M_L", "M_U", "x_lo", "x_hi", "n_x", "n_t"],
             [(m, float(sc.N_L[m]), float(sc.N_U[m]), float(sc.M_L), float(sc.M_U), float(tr.x_lo), float(tr.x_hi),
               tr.n_x, tr.n_t) for m in range(cfg.m_max + 1)])
    bands = _bands(cfg, seed, sc, disc)
    rows = []
    for (m, i), (f, L, U) in sorted(bands.items()):
        for b, x in enumerate(cfg.report_x):
            rows.append((float(cfg.report_t), float(x), i + 1, m, float(f[b]), float(L[b]), float(U[b])))
    em.write("bounds.csv", ["t", "x", "regime", "m", cfg.variant, "L", "U"], rows)
    return 0


def cmd_report(cfg: RunConfig, seed, em: Emitter) -> int:
    sc, disc = _bound_setup(cfg, seed)
    bands = _bands(cfg, seed, sc, disc)
    v = cfg.variant
    header = ["x"] + [c for m in cfg.report_m for c in (f"{v}{m}", f"L{m}", f"U{m}")]
    for i in range(cfg.p):
        rows = []
        for b, x in enumerate(cfg.report_x):
            row = [float(x)]
            for m in cfg.report_m:
                f, L, U = bands[(m, i)]
                row += [float(f[b]), float(L[b]), float(U[b])]
            rows.append(row)
        em.write(f"report_regime{i + 1}.csv", header, rows)
    return 0


def cmd_oracle(cfg: RunConfig, seed, em: Emitter) -> int:
    from . import mc_oracle as mc

    seed = _require_seed(seed, "Monte Carlo estimates")
    w0 = None
    if any(tg.startswith("w") for tg in cfg.oracle_targets):
        if cfg.is_gbm:
            from .gbm_semianalytic import w0_evaluator

            w0 = w0_evaluator(cfg.model, cfg.problem, cfg.quad)
        else:
            sol0 = iterate_system(cfg.problem, cfg.coefficients, cfg.Q, 0, cfg.lattice, "w",
                                  theta=cfg.fd_options["theta"], boundary=cfg.fd_options["boundary"],
                                  smoothing=cfg.fd_options["smoothing"])[0]

            def w0(t, x, i):
                t, x, i = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float), np.asarray(i))
                out = np.empty(x.shape)
                for j in np.unique(i):
                    sel = i == j
                    out[sel] = evaluate(sol0, t[sel], np.clip(x[sel], sol0.lattice.x_lo, sol0.lattice.x_hi), int(j))
                return out
    rows = []
    for (t, x, i) in cfg.oracle_points:
        for tg in cfg.oracle_targets:
            args = (cfg.problem, cfg.model, t, x, i, cfg.n_paths, cfg.scheme, seed)
            if tg == "v":
                est = mc.estimate_v_boundary(*args) if cfg.problem.kind == "initial_boundary" else mc.estimate_v(*args)
                m = ""
            elif tg[0] == "w":
                m = int(tg[1:])
                est = mc.estimate_w_restricted(m, *args, w0_eval=w0)
            else:
                m = int(tg[1:])
                est = mc.estimate_u_restricted(m, *args)
            rows.append((float(t), float(x), i + 1, tg[0], m, float(est.mean), float(est.stderr), est.n_paths,
                         est.seed))
    em.write("oracle.csv", ["t", "x", "regime", "target", "m", "mean", "stderr", "n_paths", "seed"], rows)
    return 0


_DISPATCH = {"validate": cmd_validate, "solve": cmd_solve, "bounds": cmd_bounds, "oracle": cmd_oracle,
             "report": cmd_report}


def _threads(arg):
    raw = arg if arg is not None else os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"threads must be a positive integer, got {raw!r}", key="threads")
    return n


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _ArgError as exc:
        print(f"regime-iter: {exc}", file=sys.stderr)
        return 1
    try:
        _accel.set_threads(_threads(args.threads))
        cfg = load_config(args.config)
        seed = cfg.seed
        if args.seed is not None:
            try:
                seed = int(args.seed, 0)
            except ValueError:
                raise ConfigError(f"--seed must be an integer, got {args.seed!r}", key="seed") from None
            if not 0 <= seed < 2 ** 64:
                raise ConfigError("--seed must fit in an unsigned 64-bit integer", key="seed")
        out = Path(args.out) if args.out else Path(cfg.out_dir)
        em = Emitter(out, cfg.float_format, _meta(cfg, seed))
        code = _DISPATCH[args.command](cfg, seed, em)
    except (ConfigError, ExpressionError) as exc:
        print(f"regime-iter: configuration error: {exc}", file=sys.stderr)
        return 1
    except (RegimeIterError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"regime-iter: numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for p in em.written:
        print(p)
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
