import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from regime_iter import _accel, ctmc
from regime_iter.errors import RateBoundViolated
from regime_iter.model import GeneratorMatrix

Q2 = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))


def test_tail_probability_examples():
    assert abs(ctmc.switch_tail_probability(1, 1, 4) - (1 + 1 + 1 / 2 + 1 / 6) * math.exp(-1)) < 1e-12
    assert ctmc.switch_tail_probability(0, 1, 1) == 1.0
    assert abs(ctmc.switch_tail_probability(1, 1, 1) - math.exp(-1)) < 1e-15
    assert ctmc.switch_tail_probability(1, 1, 0) == 0.0
    with pytest.raises(ValueError):
        ctmc.switch_tail_probability(-1, 1, 1)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2.5), st.floats(0, 2), st.integers(0, 49))
def test_tail_probability_monotone(c, d, m):
    p = ctmc.switch_tail_probability(c, d, m)
    assert ctmc.switch_tail_probability(c, d, m + 1) >= p - 1e-15
    assert ctmc.switch_tail_probability(c + 0.1, d, m) <= p + 1e-15
    assert ctmc.switch_tail_probability(c, d + 0.1, m) <= p + 1e-15
    assert abs(ctmc.switch_tail_probability(c, d, 50) - 1) < 1e-12


def test_zero_generator_never_switches():
    b = ctmc.sample_switch_paths(GeneratorMatrix(np.zeros((2, 2))), 0, 0.0, 1.0, 1000, 3)
    assert b.counts.max() == 0
    assert ctmc.sample_switch_path(GeneratorMatrix(np.zeros((2, 2))), 1, 0.0, 1.0, (3, 0)).n_switches == 0


def test_counts_are_poisson_for_symmetric_two_state_chain():
    b = ctmc.sample_switch_paths(Q2, 0, 0.0, 1.0, 100_000, 11)
    n = b.counts.size
    assert abs(b.counts.mean() - 1.0) < 3 * math.sqrt(1.0 / n)
    tail = (b.counts >= 4).mean()
    p4 = 1 - ctmc.switch_tail_probability(1, 1, 4)
    assert abs(tail - p4) < 3 * math.sqrt(p4 * (1 - p4) / n)
    k = np.arange(6)
    expected = stats.poisson.pmf(k, 1.0) * n
    expected[-1] = stats.poisson.sf(4, 1.0) * n
    observed = np.bincount(np.minimum(b.counts, 5), minlength=6)
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_batch_matches_single_path_sampler_and_backends():
    Q3 = GeneratorMatrix(np.array([[-1.0, 0.3, 0.7], [0.2, -0.5, 0.3], [1.0, 1.0, -2.0]]))
    with _accel.backend_as("numba"):
        a = ctmc.sample_switch_paths(Q3, 2, 0.0, 2.0, 5000, 3)
    with _accel.backend_as("numpy"):
        c = ctmc.sample_switch_paths(Q3, 2, 0.0, 2.0, 5000, 3)
    assert np.array_equal(a.counts, c.counts)
    assert np.array_equal(a.regimes, c.regimes)
    fin = np.isfinite(a.times)
    assert np.allclose(a.times[fin], c.times[fin], rtol=1e-15, atol=0)
    for k in range(20):
        single = ctmc.sample_switch_path(Q3, 2, 0.0, 2.0, (3, k))
        assert single.regimes == a.path(k).regimes
        assert np.allclose(single.times, a.path(k).times, rtol=1e-15, atol=0)


def test_switch_path_invariants():
    b = ctmc.sample_switch_paths(Q2, 1, 0.25, 1.5, 2000, 5)
    for k in range(200):
        sp = b.path(k)
        assert all(0.25 < s <= 1.5 for s in sp.times)
        assert all(np.diff(sp.times) > 0)
        assert all(a != c for a, c in zip((1,) + sp.regimes, sp.regimes))
    with pytest.raises(ValueError):
        ctmc.SwitchPath(0.0, 0, 1.0, (0.5,), (0,))


def test_thinning_with_constant_rates_matches_direct_sampler():
    first = [ctmc.sample_switch_path_thinning(Q2, lambda s: 1.0, 0, 0.0, 5.0, (1, k)).times[:1] for k in range(10_000)]
    direct = ctmc.sample_switch_paths(Q2, 0, 0.0, 5.0, 10_000, 2)
    a = np.array([f[0] for f in first if f])
    b = direct.times[:, 0][np.isfinite(direct.times[:, 0])]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def _q_state(x):
    x = np.asarray(x, dtype=float)
    r = np.minimum(x, 1.0)
    out = np.empty((x.size, 2, 2))
    out[:, 0, 0], out[:, 0, 1] = -r, r
    out[:, 1, 0], out[:, 1, 1] = 1.0, -1.0
    return out


def test_thinning_first_switch_is_exponential_at_frozen_state():
    Q = GeneratorMatrix(_q_state, rate_bound=1.0)
    firsts = []
    for k in range(10_000):
        sp = ctmc.sample_switch_path_thinning(Q, lambda s: 0.5, 0, 0.0, 1.0, (4, k))
        firsts.append(sp.times[0] if sp.times else np.inf)
    firsts = np.array(firsts)
    # censored at T = 1: compare the censored empirical law with Exp(0.5)
    cens = np.minimum(firsts, 1.0)
    ref = np.minimum(stats.expon(scale=2.0).rvs(size=20_000, random_state=np.random.default_rng(0)), 1.0)
    assert stats.ks_2samp(cens, ref).pvalue > 0.01
    assert abs(np.isinf(firsts).mean() - math.exp(-0.5)) < 3 * math.sqrt(0.24 / 10_000)


def test_thinning_zero_intensity_and_bound_violation():
    Q = GeneratorMatrix(_q_state, rate_bound=1.0)
    assert ctmc.sample_switch_path_thinning(Q, lambda s: 0.0, 0, 0.0, 1.0, (1, 0)).n_switches == 0
    loose = GeneratorMatrix(lambda x: 3 * _q_state(x), rate_bound=1.0)
    with pytest.raises(RateBoundViolated):
        for k in range(50):
            ctmc.sample_switch_path_thinning(loose, lambda s: 1.0, 0, 0.0, 1.0, (1, k))


def test_forced_switch_weights_estimate_tail_probability():
    u = np.random.default_rng(0).random((200_000, 3))
    for m in (1, 2, 3):
        _, regs, w = ctmc.sample_forced_switches(Q2, 0, 0.0, 1.0, m, u[:, :m], u[:, :m])
        target = 1 - ctmc.switch_tail_probability(1, 1, m)
        assert abs(w.mean() - target) < 4 * w.std() / math.sqrt(w.size) + 1e-14
        assert np.all(regs[:, 1:] != regs[:, :-1])
    Q3 = GeneratorMatrix(np.array([[-1.0, 0.5, 0.5], [0.5, -1.0, 0.5], [0.5, 0.5, -1.0]]))
    total = 0.0
    for seq in ((0, 1, 0), (0, 1, 2), (0, 2, 0), (0, 2, 1)):
        _, _, w = ctmc.sample_forced_switches(Q3, 0, 0.0, 1.0, 2, u[:, :2], sequence=seq)
        total += w.mean()
    assert abs(total - (1 - ctmc.switch_tail_probability(1, 1, 2))) < 0.005


def test_poisson_envelope_bounds_switch_tail():
    # exit rates 1, 2 and 0.5: the envelope uses the largest, c = 2
    Q = GeneratorMatrix(np.array([[-1.0, 0.5, 0.5], [1.0, -2.0, 1.0], [0.25, 0.25, -0.5]]))
    c, T, n = 2.0, 1.0, 100_000
    counts = ctmc.sample_switch_paths(Q, 0, 0.0, T, n, 21).counts
    for m in range(math.ceil(c * T), 8):
        p_hat = float(np.mean(counts >= m))
        envelope = 1.0 - ctmc.switch_tail_probability(c, T, m)
        assert p_hat <= envelope + 3 * math.sqrt(max(p_hat * (1 - p_hat), 1.0 / n) / n)
