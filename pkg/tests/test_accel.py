import os
import subprocess
import sys

import pytest

from regime_iter import _accel


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("true", "numpy"), ("0", "numba"), ("", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, REGIME_ITER_DISABLE_JIT=flag)
    out = subprocess.run([sys.executable, "-c", "from regime_iter import _accel; print(_accel.backend())"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    assert out == expected


def test_backend_context_restores():
    before = _accel.backend()
    with _accel.backend_as("numpy"):
        assert not _accel.use_numba()
    assert _accel.backend() == before
    with pytest.raises(ValueError):
        _accel.set_backend("fortran")


def test_threads_setting():
    try:
        _accel.set_threads(3)
        assert _accel.threads() == 3
        _accel.set_threads(None)
        assert _accel.threads() == 3
        with pytest.raises(ValueError):
            _accel.set_threads(0)
    finally:
        _accel.set_threads(1)
