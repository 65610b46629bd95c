import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regime_iter.expr import Expression, ExpressionError, parse


def test_arithmetic_and_functions():
    e = Expression("0.05 * x + 0.2 * sqrt(x) - exp(-t) ** 2")
    x = np.array([0.5, 1.0, 4.0])
    assert np.allclose(e(0.3, x), 0.05 * x + 0.2 * np.sqrt(x) - np.exp(-0.6))
    assert e.variables == ("t", "x")
    assert Expression("max(x - 1, 0)")(0.0, np.array([0.5, 2.0])).tolist() == [0.0, 1.0]
    assert Expression("pow(2, 10)").value() == 1024.0
    assert Expression("-pi + e").value() == pytest.approx(math.e - math.pi)
    assert Expression("abs(log(x))")(0, 0.5) == pytest.approx(math.log(2))


def test_constant_broadcasts():
    e = Expression("0.3")
    assert e.is_constant
    assert e(np.zeros((2, 3)), np.ones(3)).shape == (2, 3)
    with pytest.raises(ExpressionError):
        Expression("x").value()


@pytest.mark.parametrize("src", ["", "__import__('os')", "x.real", "y + 1", "exp(1, 2)", "f(x)", "x if t else 1",
                                 "'a'", "True", "x[0]", "lambda: 1", "x +"])
def test_rejects_unsafe_or_malformed(src):
    with pytest.raises(ExpressionError):
        Expression(src)


def test_parse_passthrough():
    e = Expression("x")
    assert parse(e) is e
    assert parse("2 * x")(0, 3.0) == 6.0
    assert "2 * x" in repr(parse("2 * x"))


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_matches_python_arithmetic(a, b):
    e = Expression(f"({a!r}) * x - ({b!r}) / 4 + t")
    assert e(1.5, 2.0) == pytest.approx(a * 2.0 - b / 4 + 1.5, rel=1e-12, abs=1e-12)
