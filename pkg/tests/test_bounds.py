import math

import numpy as np
import pytest

from regime_iter import bounds as B
from regime_iter.errors import NonFiniteValue, SandwichUnavailable
from regime_iter.fd_solver import Lattice
from regime_iter.gbm_semianalytic import QuadratureSpec
from regime_iter.mc_oracle import estimate_v
from regime_iter.model import CallPayoff, GbmRegimeModel, GeneratorMatrix

COARSE = B.TruncationGrid(0.25, 4.0, 201, 21)


@pytest.fixture(scope="module")
def report():
    Q = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    model = GbmRegimeModel(Q, 0.05, [0.15, 0.25], 0.0)
    return B.gbm_bound_report(model, CallPayoff(1.0), 1.0, COARSE, 3, quad=QuadratureSpec(path_samples=2048))


def test_annuity_values():
    assert B.annuity(0.0, 1.0) == 1.0
    assert abs(B.annuity(0.05, 1.0) - 0.9754115) < 1e-7
    assert B.annuity(0.05, 0.0) == 0.0
    assert np.allclose(B.annuity(np.array([0.0, 1e-300, 0.1]), 2.0), [2.0, 2.0, (1 - math.exp(-0.2)) / 0.1])
    with pytest.raises(ValueError):
        B.annuity(0.05, -1.0)


def test_m_r_function():
    Q = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    assert B.m_r_function(0.0, 1.0, 0, Q, [0.05, 0.05], 1.0) == pytest.approx(0.0, abs=1e-16)
    got = B.m_r_function(0.0, 1.0, 0, Q, [0.05, 0.10], 1.0)
    assert got == pytest.approx(-B.annuity(0.05, 1) + B.annuity(0.10, 1), abs=1e-15)
    assert B.m_r_extrema(Q, [0.05, 0.05], 1.0, np.linspace(0, 1, 5)) == (0.0, 0.0)
    hi, lo = B.m_r_extrema(Q, [0.05, 0.10], 1.0, np.linspace(0, 1, 11))
    assert hi == pytest.approx(-got) and lo == pytest.approx(got)


def test_m_r_estimate_matches_closed_form():
    Q = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    coeffs = GbmRegimeModel(Q, [0.05, 0.10], [0.15, 0.25], 0.0).coefficients()
    mean, se = B.m_r_estimate(0.0, 1.0, 0, Q, coeffs, 1.0, n_paths=2000, h=0.05)
    assert se < 1e-12   # constant rates: every path has the same discount
    assert mean == pytest.approx(B.m_r_function(0.0, 1.0, 0, Q, [0.05, 0.10], 1.0), abs=1e-4)


def test_discounted_time_grid_constant_rate():
    Q = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    coeffs = GbmRegimeModel(Q, [0.05, 0.10], [0.15, 0.25], 0.0).coefficients()
    lat = Lattice(0.25, 4.0, 80, 1.0, 40, "log")
    D = B.discounted_time_grid(coeffs, lat)
    D2 = B.discounted_time_grid(coeffs, lat.refined())
    for i, r in enumerate((0.05, 0.10)):
        e1 = np.abs(D[i] - B.annuity(r, 1.0 - lat.t)[:, None]).max()
        e2 = np.abs(D2[i] - B.annuity(r, 1.0 - lat.refined().t)[:, None]).max()
        assert e1 < 1e-4 and e1 / e2 > 3.5     # second order in time, exact in x
    M = B.m_r_field(Q, D, lat.x)
    assert np.allclose(M[0], -M[1])
    assert M[0, 0, 3] == pytest.approx(B.m_r_function(0.0, 1.0, 0, Q, [0.05, 0.10], 1.0), abs=1e-4)


def test_bound_function_zero_generator():
    Q = GeneratorMatrix(np.zeros((2, 2)))
    f = lambda m, t, x, j: (m + 1.0) * x * (j + 1)
    for m in range(4):
        assert B.bound_function_N(m, 0.0, 1.3, 0, f, Q) == 0.0


def test_bound_function_pointwise_matches_field(report):
    fam = report.iterates.family("w")
    t, x = COARSE.t_points(1.0), COARSE.x_points()
    Q = report.model.Q

    def f(m, tt, xx, j):
        return fam[m][j, list(t).index(tt), list(x).index(xx)]

    for m in range(4):
        field = B.bound_field_N(m, fam, Q)
        for (ti, xi, i) in [(0, 75, 0), (5, 100, 1), (20, 3, 0)]:
            assert field[i, ti, xi] == pytest.approx(B.bound_function_N(m, t[ti], x[xi], i, f, Q), abs=1e-15)


def test_essential_extrema_examples():
    assert B.essential_extrema(np.full((1, 3, 4), -5.0)) == (0.0, -5.0)
    assert B.essential_extrema(np.full((1, 3, 4), 5.0)) == (5.0, 0.0)
    grid = B.TruncationGrid(1e-9, 2 * np.pi, 2001, 3)
    hi, lo = B.essential_extrema(lambda t, x, i: np.sin(x), grid, T=1.0)
    # dense refinement oracle: the extrema on a 10x finer grid
    fine = np.sin(np.linspace(1e-9, 2 * np.pi, 20001))
    assert abs(hi - fine.max()) < 2e-6 and abs(lo - fine.min()) < 2e-6
    with pytest.raises(NonFiniteValue):
        B.essential_extrema(np.array([0.0, np.nan]))


def test_scalars_validation():
    with pytest.raises(ValueError):
        B.BoundScalars((-0.1,), (0.0,))
    with pytest.raises(ValueError):
        B.BoundScalars((0.1,), (0.0,), M_U=-1.0)


def test_reference_extrema(report):
    sc = report.scalars
    assert abs(sc.N_U[0] - 0.0379) <= 0.1 * 0.0379 and abs(sc.N_L[0] + 0.0379) <= 0.1 * 0.0379
    assert abs(sc.N_L[3] + 0.00083) <= 0.25 * 0.00083
    assert abs(sc.N_U[3] - 0.00091) <= 0.25 * 0.00091
    widths = [sc.width(m) for m in range(4)]
    assert all(a >= b for a, b in zip(widths, widths[1:]))


def test_hard_bounds_examples(report):
    sc = report.scalars
    L, U = report.band(3, 0.0, 1.0, 0, 0.0976)
    assert U - L == pytest.approx(sc.width(3) * B.annuity(0.05, 1.0), rel=1e-12)
    assert U - L == pytest.approx((0.00091 + 0.00083) * 0.9754, rel=0.25)
    zero = B.BoundScalars((0.0,), (0.0,))
    assert B.hard_bounds(0, 0.0, 1.0, 0, 0.3, zero, 0.05, T=1.0) == (0.3, 0.3)
    # full formula with M_r = 0 equals the constant-rate shortcut
    L2, U2 = B.hard_bounds(3, 0.0, 1.0, 0, 0.0976, sc, discounted_time=B.annuity(0.05, 1.0))
    assert abs(L2 - L) < 1e-12 and abs(U2 - U) < 1e-12


def test_hard_bounds_monotone_and_unavailable():
    a = B.BoundScalars((0.01,), (-0.01,), 0.2, -0.1)
    b = B.BoundScalars((0.02,), (-0.01,), 0.2, -0.1)
    assert B.hard_bounds(0, 0.0, 1.0, 0, 0.1, b, 0.05, T=1.0)[1] >= B.hard_bounds(0, 0.0, 1.0, 0, 0.1, a, 0.05, T=1.0)[1]
    L, U = B.hard_bounds(0, 0.0, 1.0, 0, 0.1, a, 0.05, T=1.0)
    assert L <= 0.1 <= U
    with pytest.raises(SandwichUnavailable):
        B.hard_bounds(0, 0.0, 1.0, 0, 0.1, B.BoundScalars((0.0,), (0.0,), 1.0, 0.0), 0.05, T=1.0)


def test_bounds_bracket_monte_carlo(report, call_problem):
    fam = report.iterates
    x = COARSE.x_points()
    est = estimate_v(call_problem, report.model, 0.0, 1.0, 0, 200_000, rng=11)
    j = int(np.argmin(np.abs(x - 1.0)))
    assert x[j] == pytest.approx(1.0, abs=1e-12)
    for m in range(4):
        L, U = report.band(m, 0.0, 1.0, 0, fam.family("w")[m][0, 0, j])
        assert L <= est.mean + 3 * est.stderr and U >= est.mean - 3 * est.stderr
