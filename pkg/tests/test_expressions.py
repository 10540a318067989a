import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minflow.errors import InvalidSpec
from minflow.expressions import Expression, coefficient_function, field_function, vector_function

CASES = [
    "1", "2.5e-3", "-x", "+y", "x + y", "x - y*t", "x*y/3", "x^2", "x**3 - 2*x", "2^3^2",
    "-x^2", "(x + 1)^(y + 2)", "pi", "e", "pi*x", "e^t", "sin(x)", "cos(pi*y)", "exp(-t)", "abs(x - y)",
    "min(x, y)", "max(x, y)", "min(x, y, t)", "max(1, x, 2*y, t)", "min(max(x, 0), 1)", "sin(x)^2 + cos(x)^2",
    "exp(-(x - 0.4)^2 / 0.01)", "abs(sin(3*x)) * exp(-t)", "1/(1 + x^2)", "x / (y + 4)",
    "max(0, 1 - 16*(x - 1)^2)", "sin(pi*x)*exp(-pi^2*t)", "0.5*(1 + cos(2*pi*x))", "t*x - y*t + x*y",
    "((x))", "3 - -x", "2*-y", "x^0.5", "abs(y)^1.5", "exp(sin(x) * cos(y))", "min(abs(x), abs(y)) + t",
    "1e2*x - 1e-2*y", "cos(x + y + t)", "sin(e*x) / e", "(x - y)^2 / (1 + t)", "max(x^2, y^3, t^4)",
    "x - x", "2^-1", "exp(0)", "abs(-pi)",
]
POINTS = [(0.0, 0.3, 0.7), (0.25, 1.3, -0.4), (1.5, 0.01, 2.2), (0.1, 0.5, 0.5)]


def reference(src, t, x, y):
    env = {"t": t, "x": x, "y": y, "pi": math.pi, "e": math.e, "sin": math.sin, "cos": math.cos,
           "exp": math.exp, "abs": abs, "min": min, "max": max, "__builtins__": {}}
    return float(eval(src.replace("^", "**"), env))


def test_table_has_fifty_cases():
    assert len(CASES) == 50 and len(set(CASES)) == 50


@pytest.mark.parametrize("src", CASES)
def test_matches_reference_interpreter(src):
    expr = Expression(src)
    for t, x, y in POINTS:
        ref = reference(src, t, x, y)
        got = float(expr(t=t, x=x, y=y))
        assert abs(got - ref) <= 1e-15 * max(1.0, abs(ref)), (src, t, x, y)


@pytest.mark.parametrize("src", CASES)
def test_vectorised_equals_scalar(src):
    expr = Expression(src)
    t, x, y = np.array(POINTS).T
    vec = expr(t=t, x=x, y=y)
    np.testing.assert_array_equal(vec, [float(expr(t=a, x=b, y=c)) for a, b, c in POINTS])


@pytest.mark.parametrize("bad", [
    "import os", "__import__('os')", "x.real", "[x]", "x if y else t", "z + 1", "log(x)", "sin(x, y)",
    "sin(x=1)", "x < y", "lambda: 1", "", "True", "'a'", "min()", "x @ y", "x // 2", "x % 2",
])
def test_rejects_unsafe_or_unknown(bad):
    with pytest.raises(InvalidSpec):
        Expression(bad)(t=0.0, x=1.0, y=1.0)


def test_numbers_and_names():
    assert float(Expression(3)()) == 3.0
    assert Expression("x*t + pi").names == {"x", "t"}
    with pytest.raises(InvalidSpec):
        Expression(None)


def test_on_points_1d_and_2d():
    e = Expression("x + 10*y")
    np.testing.assert_array_equal(e.on_points(0.0, np.array([[1.0], [2.0]])), [1.0, 2.0])
    np.testing.assert_array_equal(e.on_points(0.0, np.array([[1.0, 1.0], [2.0, 3.0]])), [11.0, 32.0])


def test_constant_broadcasts_to_points():
    f = field_function("2")
    assert f(0.0, np.zeros((5, 2))).shape == (5,)


def test_vector_function_columns():
    fn = vector_function(["1", "x"])
    out = fn(0.0, np.array([[2.0, 0.0], [3.0, 0.0]]))
    np.testing.assert_array_equal(out, [[1.0, 2.0], [1.0, 3.0]])


def test_coefficient_function():
    assert coefficient_function(None) == 1.0
    assert coefficient_function("2*pi") == pytest.approx(2 * math.pi)
    fn = coefficient_function("1 + x")
    np.testing.assert_array_equal(fn(np.array([[0.0], [1.0]])), [1.0, 2.0])


@given(a=st.floats(-100, 100), b=st.floats(-100, 100))
def test_arithmetic_property(a, b):
    assert float(Expression("x*y - x + 3")(x=a, y=b)) == a * b - a + 3
