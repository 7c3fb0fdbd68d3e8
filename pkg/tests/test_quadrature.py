import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from casimirkit import quadrature as q
from casimirkit.errors import ConfigError, EvaluationError, TruncationError
from casimirkit.units import temperature_to_natural


def test_laguerre_zeroth_moment():
    v, _ = q.integrate(q.build_rule("gauss_laguerre", 1, 1.0), lambda x: math.exp(-x))
    assert v == pytest.approx(1.0, rel=1e-15)


def test_laguerre_degree_two():
    v, _ = q.integrate(q.build_rule("gauss_laguerre", 2, 1.0), lambda x: x * x * math.exp(-x))
    assert v == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_laguerre_exact_to_degree_2n_minus_1(n):
    scale = 0.7
    rule = q.build_rule("gauss_laguerre", n, scale)
    for k in range(2 * n):
        v, _ = q.integrate(rule, lambda x: x**k * math.exp(-x / scale))
        exact = math.factorial(k) * scale ** (k + 1)
        assert v == pytest.approx(exact, rel=1e-12)


def test_clenshaw_curtis_exponential():
    v, _ = q.integrate(q.build_rule("transformed_clenshaw_curtis", 64, 1.0), lambda x: math.exp(-2 * x))
    assert abs(v - 0.5) < 1e-10


def test_integrate_zero_function():
    v, s = q.integrate(q.build_rule("gauss_laguerre", 5, 1.0), lambda x: 0.0)
    assert v == 0.0 and len(s) == 5


def test_integrate_weight_function():
    v, _ = q.integrate(q.build_rule("gauss_laguerre", 8, 1.0), lambda x: math.exp(-x))
    assert abs(v - 1.0) < 1e-12


def test_integrate_gamma_moment():
    v, _ = q.integrate(q.build_rule("gauss_laguerre", 16, 0.5), lambda x: x**3 * math.exp(-2 * x))
    assert abs(v - 0.375) < 1e-8


def test_samples_reproduce_value():
    v, s = q.integrate(q.build_rule("transformed_clenshaw_curtis", 20, 1.0), lambda x: 1 / (1 + x) ** 3)
    assert math.fsum(x.value * x.weight for x in s) == pytest.approx(v, rel=1e-14)


@pytest.mark.parametrize("kind", ["gauss_laguerre", "transformed_clenshaw_curtis"])
def test_rule_invariants(kind):
    r = q.build_rule(kind, 30, 2.0)
    assert np.all(np.diff(r.nodes) > 0) and np.all(r.nodes > 0)
    assert np.all(np.isfinite(r.weights))


@pytest.mark.parametrize("kind", ["gauss_laguerre", "transformed_clenshaw_curtis"])
def test_doubling_within_error_estimate(kind):
    f = lambda x: x * math.exp(-x) / (1 + x)  # noqa: E731
    exact = 1 - math.e * 0.21938393439552029  # 1 - e E1(1)
    v, err, _ = q.integrate_with_error(kind, 24, 1.0, f)
    v4, _ = q.integrate(q.build_rule(kind, 96, 1.0), f)
    assert abs(v4 - v) <= err
    assert abs(v - exact) <= err


def test_bad_rules():
    with pytest.raises(ConfigError):
        q.build_rule("gauss_laguerre", 0, 1.0)
    with pytest.raises(ConfigError):
        q.build_rule("gauss_laguerre", 4, -1.0)
    with pytest.raises(ConfigError):
        q.build_rule("simpson", 4, 1.0)


def test_nonfinite_integrand_names_node():
    rule = q.build_rule("gauss_laguerre", 4, 1.0)
    bad = float(rule.nodes[2])
    with pytest.raises(EvaluationError, match=repr(bad)[:8]):
        q.integrate(rule, lambda x: float("nan") if x == bad else 1.0)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_integrate_is_linear(alpha, beta):
    rule = q.build_rule("transformed_clenshaw_curtis", 16, 1.0)
    f = lambda x: math.exp(-x)  # noqa: E731
    g = lambda x: 1 / (1 + x * x)  # noqa: E731
    lhs, _ = q.integrate(rule, lambda x: alpha * f(x) + beta * g(x))
    rhs = alpha * q.integrate(rule, f)[0] + beta * q.integrate(rule, g)[0]
    assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-13)


def test_threads_do_not_change_result(monkeypatch):
    rule = q.build_rule("gauss_laguerre", 40, 1.0)
    f = lambda x: math.sin(x) * math.exp(-x)  # noqa: E731
    v1 = q.integrate(rule, f)[0]
    monkeypatch.setenv(q.THREADS_ENV, "4")
    assert q.n_threads() == 4
    assert q.integrate(rule, f)[0] == v1
    monkeypatch.setenv(q.THREADS_ENV, "lots")
    with pytest.raises(ConfigError):
        q.n_threads()


# --- Matsubara ---

def test_matsubara_half_weight():
    T = 300.0
    t = temperature_to_natural(T)
    v = q.matsubara_sum(T, lambda x: 1.0 if x == 0 else 0.0, n_max=5)
    assert v == pytest.approx(2 * math.pi * t * 0.5, rel=1e-15)


def test_matsubara_rule_nodes():
    r = q.matsubara_rule(2.0, 4, natural=True)
    assert np.allclose(r.nodes, 4 * math.pi * np.arange(5))
    assert r.weights[0] == pytest.approx(0.5 * r.weights[1])


def test_matsubara_geometric_series():
    # f(xi) = exp(-xi/(2 pi t)) gives terms exp(-n): a geometric series
    T = 300.0
    t = temperature_to_natural(T)
    f = lambda x: math.exp(-x / (2 * math.pi * t))  # noqa: E731
    v = q.matsubara_sum(T, f, tail_tol=1e-16)
    exact = 2 * math.pi * t * (0.5 + math.exp(-1) / (1 - math.exp(-1)))
    assert abs(v - exact) < 1e-12 * exact


def test_matsubara_truncation_error():
    with pytest.raises(TruncationError, match="last term"):
        q.matsubara_sum(1.0, lambda x: 1.0 / (1 + x), n_max=3, natural=True)


def test_matsubara_needs_positive_temperature():
    with pytest.raises(ConfigError):
        q.matsubara_sum(0.0, lambda x: 1.0)


def test_matsubara_trapezoid_order_two():
    # nonzero slope at 0+, so the trapezoid error is O(t^2)
    g = lambda x: math.exp(-2 * x) + x * math.exp(-x)  # noqa: E731
    exact = 0.5 + 1.0
    ts = [0.2, 0.1, 0.05, 0.025]
    errs = [abs(q.matsubara_sum(t, g, natural=True, tail_tol=1e-15) - exact) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
    assert abs(slope - 2) < 0.2


def test_matsubara_samples_reintegrate():
    v, s = q.matsubara_sum(1.0, lambda x: math.exp(-x), natural=True, return_samples=True)
    assert math.fsum(x.value * x.weight for x in s) == pytest.approx(v, rel=1e-13)
    assert s[0].xi == 0.0
