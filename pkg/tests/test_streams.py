import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regime_iter import _accel, streams


def _reference_bits(seed, stream, path, block):
    """Raw Philox4x64-10 block from numpy's bit generator for one counter.

    numpy increments its 256-bit counter before each block, so start one below.
    """
    value = block + (path << 64) + (stream << 128)
    bg = np.random.Philox(counter=(value - 1) % 2 ** 256, key=np.array([seed, streams._KEY1], dtype=np.uint64))
    return bg.random_raw(4)


@pytest.mark.parametrize("seed,stream,path,block", [(0, 0, 0, 0), (7, 1, 3, 5), (2 ** 63 + 11, 2, 123456, 77)])
def test_philox_matches_numpy_bit_generator(seed, stream, path, block):
    ref = _reference_bits(seed, stream, path, block)
    ours = streams.philox_np(np.array([[block, path, stream, 0]], dtype=np.uint64), streams.seed_key(seed))[0]
    assert np.array_equal(ours, ref)
    nb = streams.philox_block(np.uint64(block), np.uint64(path), np.uint64(stream), np.uint64(0),
                              np.uint64(seed), np.uint64(streams._KEY1))
    assert np.array_equal(np.array(nb, dtype=np.uint64), ref)


def test_backends_agree_bit_for_bit():
    paths = np.arange(1000)
    idx = np.arange(1000) % 17
    with _accel.backend_as("numba"):
        a = streams.uniforms(99, 2, paths, idx)
        na = streams.normals(99, 2, paths, idx)
    with _accel.backend_as("numpy"):
        b = streams.uniforms(99, 2, paths, idx)
        nb = streams.normals(99, 2, paths, idx)
    assert np.array_equal(a, b)
    assert np.array_equal(na, nb)


def test_scalar_normal_kernel_matches_vector_api():
    k0, k1 = streams.seed_key(5)
    vals = [streams.normal_nb(np.uint64(k0), np.uint64(k1), 1, 42, j) for j in range(9)]
    assert np.array_equal(np.array(vals), streams.normals(5, 1, 42, np.arange(9)))


def test_uniforms_open_interval_and_moments():
    u = streams.uniforms(1, 0, np.arange(200_000), 0)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)
    z = streams.normals(1, 0, np.arange(200_000), 3)
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.02


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 3), st.integers(0, 2 ** 40), st.integers(0, 2 ** 20))
def test_draws_are_pure_functions_of_their_coordinates(seed, stream, path, index):
    a = streams.uniforms(seed, stream, path, index)
    b = streams.uniforms(seed, stream, np.array([path, path + 1]), index)[0]
    assert a == b


def test_path_stream_walks_consecutive_indices():
    ps = streams.PathStream(3, 8)
    got = [ps.uniform(0) for _ in range(5)]
    assert np.array_equal(got, streams.uniforms(3, 0, 8, np.arange(5)))
    assert ps.at(0, 2) == got[2]


def test_seed_validation():
    with pytest.raises(ValueError):
        streams.seed_key(-1)
    with pytest.raises(ValueError):
        streams.seed_key(2 ** 64)
    with pytest.raises(ValueError):
        streams.as_seed(None)
    with pytest.raises(TypeError):
        streams.as_seed("3")
    assert streams.as_seed(np.random.default_rng(0)) == streams.as_seed(np.random.default_rng(0))
