"""Numba vs numpy timings for the dual-backend kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs once per backend to warm up (JIT compile, caches), then the
best of ``--repeat`` timings is reported.  Both backends must produce the
same numbers; the script checks that too.
"""
import argparse
import time

import numpy as np

from regime_iter import _accel
from regime_iter.ctmc import sample_switch_paths
from regime_iter.fd_solver import Lattice, iterate_system
from regime_iter.gbm_semianalytic import QuadratureSpec, iterate_grid
from regime_iter.mc_oracle import estimate_v
from regime_iter.model import CallPayoff, GbmRegimeModel, GeneratorMatrix, ProblemSpec
from regime_iter.streams import STREAM_LEG, uniforms

Q = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
MODEL = GbmRegimeModel(Q, 0.05, [0.15, 0.25], 0.0)
CALL = ProblemSpec(1.0, CallPayoff(1.0))


def k_philox():
    return uniforms(7, STREAM_LEG, np.arange(1_000_000), 3)


def k_ctmc():
    return sample_switch_paths(Q, 0, 0.0, 1.0, 200_000, 7).counts


def k_exact_paths():
    e = estimate_v(CALL, MODEL, 0.0, 1.0, 0, 200_000, rng=7)
    return np.array([e.mean, e.stderr])


def k_tridiag():
    lat = Lattice(0.05, 20.0, 400, 1.0, 400, "log")
    return iterate_system(CALL, MODEL.coefficients(), Q, 1, lat)[1].values


def k_call_mixture():
    it = iterate_grid(MODEL, CALL, np.array([0.0, 0.5]), np.linspace(0.25, 4.0, 201), 3,
                      QuadratureSpec(path_samples=2048), 7)
    return it.w[3]


KERNELS = [("philox uniforms (1e6)", k_philox), ("ctmc batch (2e5 paths)", k_ctmc),
           ("exact GBM paths (2e5)", k_exact_paths), ("fd iterate 400x400, m<=1", k_tridiag),
           ("call mixture grid, m<=3", k_call_mixture)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':28s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}  same")
    for name, fn in KERNELS:
        res = {}
        for backend in ("numba", "numpy"):
            with _accel.backend_as(backend):
                fn()
                res[backend] = best_of(fn, args.repeat)
        (tn, a), (tp, b) = res["numba"], res["numpy"]
        same = np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-10, atol=1e-14)
        print(f"{name:28s} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
