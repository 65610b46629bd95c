import math

import numpy as np
import pytest

from regime_iter import _accel
from regime_iter import gbm_semianalytic as G
from regime_iter.ctmc import switch_tail_probability
from regime_iter.mc_oracle import (PathEstimate, SchemeSettings, estimate_u_restricted, estimate_v,
                                   estimate_v_boundary, estimate_w_restricted, exact_gbm_paths)
from regime_iter.model import (CallPayoff, FunctionPayoff, GbmRegimeModel, GeneralModel, GeneratorMatrix, Interval,
                               ProblemSpec)

ZERO = FunctionPayoff(lambda x, i: np.zeros_like(x))


def _boundary_problem(lo=0.5, hi=2.0):
    g = FunctionPayoff(lambda x, i: (x - lo) * (hi - x))
    return ProblemSpec(1.0, g, "initial_boundary", Interval(lo, hi), psi=lambda t, x, i: np.zeros(np.shape(x)))


def test_single_regime_call_matches_closed_form(single_regime, call_problem, backend):
    est = estimate_v(call_problem, single_regime, 0.0, 1.0, 0, 100_000, rng=3)
    assert est.contains(G.call_closed_form(1.0, 0.05, 0.15, 1.0, 0.0, 1.0))
    assert est.n_paths == 100_000 and est.seed == 3


def test_zero_payoff_is_exactly_zero(two_regime):
    est = estimate_v(ProblemSpec(1.0, ZERO), two_regime, 0.0, 1.0, 0, 10_000)
    assert est.mean == 0.0 and est.stderr == 0.0


def test_backends_agree(two_regime, call_problem):
    with _accel.backend_as("numba"):
        a = estimate_v(call_problem, two_regime, 0.0, 1.0, 1, 20_000, rng=5)
    with _accel.backend_as("numpy"):
        b = estimate_v(call_problem, two_regime, 0.0, 1.0, 1, 20_000, rng=5)
    assert a.mean == pytest.approx(b.mean, rel=1e-12, abs=1e-15)
    assert a.stderr == pytest.approx(b.stderr, rel=1e-10)


def test_reproducible_and_chunk_independent(two_regime, call_problem):
    a = estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 30_000, rng=8)
    b = estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 30_000, SchemeSettings(chunk=7_000), rng=8)
    assert a == estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 30_000, rng=8)
    assert a.mean == pytest.approx(b.mean, rel=1e-13)


def test_stderr_scaling(two_regime, call_problem):
    a = estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 25_000, rng=1)
    b = estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 100_000, rng=2)
    assert a.stderr / b.stderr == pytest.approx(2.0, rel=0.2)


def test_discount_factors_in_unit_interval(two_regime):
    res = exact_gbm_paths(two_regime, 0.0, 1.0, 0, 1.0, 4, 0, 5000)
    assert np.all(res.logthT <= 0) and np.all(np.isfinite(res.logthT))


def test_w_restricted_examples(two_regime, call_problem):
    w0 = G.w0_evaluator(two_regime, call_problem)
    assert estimate_w_restricted(0, call_problem, two_regime, 0.0, 1.0, 0, 10, rng=1, w0_eval=w0).mean == \
        pytest.approx(G.w0(0.0, 1.0, 0, two_regime, call_problem), abs=1e-15)
    far = estimate_w_restricted(40, call_problem, two_regime, 0.0, 1.0, 0, 50_000, rng=1, w0_eval=w0)
    v = estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 50_000, rng=1)
    assert far.mean == v.mean and far.stderr == v.stderr
    w2 = estimate_w_restricted(2, call_problem, two_regime, 0.0, 1.0, 0, 200_000, rng=2, w0_eval=w0)
    assert w2.contains(G.iterate_level2(0.0, 1.0, 0, two_regime, call_problem))
    with pytest.raises(ValueError):
        estimate_w_restricted(1, call_problem, two_regime, 0.0, 1.0, 0, 10)


def test_coupling_fraction_matches_poisson_tail(two_regime):
    n, m = 100_000, 2
    res = exact_gbm_paths(two_regime, 0.0, 1.0, 0, 1.0, 9, 0, n, stop_m=m)
    frac = res.stopped.mean()
    p = 1.0 - switch_tail_probability(1.0, 1.0, m)
    assert abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_u_restricted_examples(two_regime, single_regime, call_problem):
    u0 = estimate_u_restricted(0, call_problem, two_regime, 0.0, 1.0, 0, 200_000, rng=4)
    assert u0.contains(G.u0(0.0, 1.0, 0, two_regime, call_problem))
    a = estimate_u_restricted(0, call_problem, single_regime, 0.0, 1.1, 0, 20_000, rng=4)
    b = estimate_v(call_problem, single_regime, 0.0, 1.1, 0, 20_000, rng=4)
    assert a.mean == b.mean
    means = [estimate_u_restricted(m, call_problem, two_regime, 0.0, 1.0, 1, 20_000, rng=6).mean for m in range(5)]
    assert all(x <= y for x, y in zip(means, means[1:]))
    u1 = estimate_u_restricted(1, call_problem, two_regime, 0.0, 1.0, 1, 200_000, rng=7)
    assert u1.contains(G.iterate_level1(0.0, 1.0, 1, two_regime, call_problem, variant="u"))


def test_euler_scheme_with_heat_source():
    Q = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    gbm = GbmRegimeModel(Q, [0.03, 0.07], [0.15, 0.25], 0.0)
    model = GeneralModel(Q, gbm.coefficients())
    phi = lambda t, x, i: np.full(np.shape(x), 2.0)
    prob = ProblemSpec(1.0, ZERO, phi=phi)
    est = estimate_v(prob, model, 0.0, 1.0, 0, 4_000, SchemeSettings("euler", 1e-2), rng=1)
    # constant phi: the value is -2 E[int Theta ds]; bracket it by the single-rate annuities
    lo, hi = -2 * (1 - math.exp(-0.03)) / 0.03, -2 * (1 - math.exp(-0.07)) / 0.07
    assert lo - 3 * est.stderr <= est.mean <= hi + 3 * est.stderr
    same = estimate_v(ProblemSpec(1.0, ZERO, phi=phi), gbm, 0.0, 1.0, 0, 4_000, SchemeSettings("exact", 1e-2), rng=1)
    assert same.mean == pytest.approx(est.mean, abs=3 * math.hypot(est.stderr, same.stderr) + 1e-4)


def test_euler_gbm_call(single_regime, call_problem):
    model = GeneralModel(single_regime.Q, single_regime.coefficients())
    est = estimate_v(call_problem, model, 0.0, 1.0, 0, 40_000, SchemeSettings("euler", 1e-2), rng=2)
    assert abs(est.mean - G.call_closed_form(1.0, 0.05, 0.15, 1.0, 0.0, 1.0)) <= 3 * est.stderr + 5e-4


def test_boundary_examples(two_regime, call_problem):
    prob = _boundary_problem()
    assert estimate_v_boundary(prob, two_regime, 0.2, 0.5, 0, 100).mean == 0.0
    assert estimate_v_boundary(prob, two_regime, 0.2, 2.0, 1, 100) == PathEstimate(0.0, 0.0, 100, 0)
    wide = ProblemSpec(1.0, CallPayoff(1.0), "initial_boundary", Interval(1e-6, 1e6),
                       psi=lambda t, x, i: np.maximum(x - 1.0, 0.0))
    a = estimate_v_boundary(wide, two_regime, 0.0, 1.0, 0, 50_000, SchemeSettings(h=1e-2), rng=3)
    b = estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 50_000, rng=3)
    assert abs(a.mean - b.mean) <= 3 * math.hypot(a.stderr, b.stderr)
    with pytest.raises(Exception):
        estimate_v_boundary(call_problem, two_regime, 0.0, 1.0, 0, 10)


def test_boundary_monitoring_halving(two_regime):
    prob = _boundary_problem()
    a = estimate_v_boundary(prob, two_regime, 0.0, 1.0, 0, 40_000, SchemeSettings(h=2e-3), rng=7)
    b = estimate_v_boundary(prob, two_regime, 0.0, 1.0, 0, 40_000, SchemeSettings(h=1e-3), rng=7)
    assert abs(a.mean - b.mean) < 3 * math.hypot(a.stderr, b.stderr)
    assert 0 <= b.mean <= 0.5625


def test_point_validation(two_regime, call_problem):
    with pytest.raises(ValueError):
        estimate_v(call_problem, two_regime, 0.0, 1.0, 2, 10)
    with pytest.raises(ValueError):
        estimate_v(call_problem, two_regime, 2.0, 1.0, 0, 10)
    assert estimate_v(call_problem, two_regime, 1.0, 1.3, 0, 10).mean == pytest.approx(0.3)


def test_thread_count_does_not_change_bits(two_regime, call_problem):
    settings = SchemeSettings(chunk=5_000)
    try:
        _accel.set_threads(1)
        a = estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 23_000, settings, rng=12)
        _accel.set_threads(4)
        b = estimate_v(call_problem, two_regime, 0.0, 1.0, 0, 23_000, settings, rng=12)
    finally:
        _accel.set_threads(1)
    assert a == b
