from pathlib import Path

import numpy as np
import pytest

import regime_iter
from regime_iter.config import load_config, split_top
from regime_iter.errors import ConfigError
from regime_iter.model import GbmRegimeModel, GeneralModel

BASE = """
[model]
regimes = 2
q = -1, 1; 1, -1
r = 0.05
sigma = 0.15, 0.25

[problem]
horizon = 1.0
strike = 1.0
"""


def _cfg(text=BASE, **over):
    for sec_key, val in over.items():
        sec, key = sec_key.split("__")
        text += f"\n[{sec}]\n{key} = {val}\n"
    return load_config(text=text)


def test_split_top():
    assert split_top("a, max(x, 1), b") == ["a", "max(x, 1)", "b"]
    assert split_top("1;2 ; 3", ";") == ["1", "2", "3"]


def test_defaults():
    cfg = _cfg()
    assert isinstance(cfg.model, GbmRegimeModel) and cfg.p == 2
    assert cfg.method == "semianalytic" and cfg.m_max == 3 and cfg.variant == "w"
    assert (cfg.lattice.x_lo, cfg.lattice.x_hi, cfg.lattice.n_x, cfg.lattice.transform) == (0.05, 20.0, 400, "log")
    assert (cfg.truncation.x_lo, cfg.truncation.x_hi, cfg.truncation.n_x, cfg.truncation.n_t) == (0.25, 4.0, 501, 101)
    assert cfg.seed is None and cfg.float_format == "%.17g"
    assert cfg.rate_constants == [0.05, 0.05]
    assert cfg.oracle_points == [(0.0, 1.0, 0)]
    assert len(cfg.config_hash) == 16


def test_shipped_configs_load():
    for name in ("two_regime.cfg", "three_regime.cfg"):
        text = (Path(regime_iter.__file__).parent / "configs" / name).read_text()
        cfg = load_config(text=text)
        assert cfg.seed == 20240607
        if cfg.p == 2:
            assert [i for _, _, i in cfg.oracle_points] == [0, 0, 0, 1, 1, 1]
    assert cfg.p == 3 and np.allclose(cfg.Q.matrix.sum(1), 0)


def test_general_model_and_state_dependent_q():
    text = """
[model]
regimes = 2
type = general
q = -(1 + 0.5 * x / (1 + x)), 1 + 0.5 * x / (1 + x); 1, -1
rate_bound = 1.5
drift = 0.05 * x
vol.1 = 0.15 * x
vol.2 = 0.25 * x
rate = 0.05

[problem]
horizon = 1
payoff = expression
g = max(x - 1, 0)
kinks = 1

[method]
name = fd
"""
    cfg = load_config(text=text)
    assert isinstance(cfg.model, GeneralModel)
    assert not cfg.Q.is_constant
    assert cfg.scheme.scheme == "euler"
    q = cfg.Q.at(np.array([1.0]))[0]
    assert q[0, 1] == pytest.approx(1.25)
    assert cfg.coefficients.vol[1](0.0, np.array([2.0]))[0] == pytest.approx(0.5)
    assert cfg.problem.payoff.kinks == (1.0,)
    with pytest.raises(ConfigError) as exc:
        load_config(text=text.replace("rate_bound = 1.5\n", ""))
    assert exc.value.key == "rate_bound"


def test_boundary_problem():
    text = BASE.replace("strike = 1.0", """kind = initial_boundary
lo = 0.5
hi = 2
payoff = expression
g = (x - 0.5) * (2 - x)
psi = 0""") + "\n[method]\nname = fd\n"
    cfg = load_config(text=text)
    assert cfg.lattice.transform == "identity" and cfg.lattice.x_lo == 0.5
    bad = text.replace("psi = 0", "psi = 1")
    with pytest.raises(ConfigError) as exc:
        load_config(text=bad)
    assert exc.value.key == "psi"


@pytest.mark.parametrize("section,key,value,bad_key", [
    ("method", "name", "magic", "name"),
    ("method", "m_max", "-1", "m_max"),
    ("method", "theta", "2", "theta"),
    ("method", "n_paths", "1", "n_paths"),
    ("run", "seed", "abc", "seed"),
    ("run", "seed", str(2 ** 64), "seed"),
    ("output", "float_format", "%d%d", "float_format"),
    ("oracle", "points", "0:1:3", "points"),
    ("oracle", "points", "2:1:1", "points"),
    ("oracle", "targets", "z3", "targets"),
    ("report", "m", "0, 5", "m"),
    ("bounds", "x_lo", "5", "x_lo"),
])
def test_errors_name_the_key(section, key, value, bad_key):
    with pytest.raises(ConfigError) as exc:
        _cfg(**{f"{section}__{key}": value})
    assert exc.value.key == bad_key


def test_model_errors():
    with pytest.raises(ConfigError, match="horizon") as exc:
        load_config(text=BASE.replace("horizon = 1.0", ""))
    assert exc.value.key == "horizon"
    with pytest.raises(ConfigError) as exc:
        load_config(text=BASE.replace("sigma = 0.15, 0.25", "sigma = 0.1, 0.2, 0.3"))
    assert exc.value.key == "sigma"
    with pytest.raises(ConfigError) as exc:
        load_config(text=BASE.replace("q = -1, 1; 1, -1", "q = -1, 1"))
    assert exc.value.key == "q"
    with pytest.raises(ConfigError) as exc:
        load_config(text=BASE.replace("[problem]", "[nothing]"))
    assert exc.value.key == "problem"
    with pytest.raises(ConfigError):
        load_config(text="not a config")
    with pytest.raises(ConfigError) as exc:
        load_config("/nonexistent/file.cfg")
    assert exc.value.key == "config"


def test_seed_formats():
    assert _cfg(run__seed="0x10").seed == 16
    assert _cfg(run__seed=str(2 ** 64 - 1)).seed == 2 ** 64 - 1
