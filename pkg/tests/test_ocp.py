import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2dident.ocp import OcpCurve, OcpError, default_negative, default_positive, evaluate, format_terms, \
    load_table, parse_terms

# 0.12 + 0.66 exp(-20) - 0.03 tanh(6.4), evaluated by hand
NEG_AT_HALF = 0.0900001670062584


def test_linear_table_midpoint():
    c = OcpCurve("pos", table=([0.0, 1.0], [1.0, 0.0]))
    assert evaluate(c, 0.5) == pytest.approx(0.5, abs=1e-15)


def test_default_negative_golden():
    assert evaluate(default_negative(), 0.5) == pytest.approx(NEG_AT_HALF, rel=1e-14)


def test_table_reproduces_knots():
    x = np.array([0.0, 0.2, 0.5, 0.7, 1.0])
    v = np.array([4.3, 4.0, 3.8, 3.7, 3.2])
    c = OcpCurve("pos", table=(x, v))
    np.testing.assert_array_equal(c(x[1:-1]), v[1:-1])


def test_defaults_are_decreasing_and_finite():
    x = np.linspace(1e-6, 1 - 1e-6, 2001)
    for c in (default_negative(), default_positive()):
        u = c(x)
        assert np.all(np.isfinite(u))
        assert np.all(np.diff(u) < 0)
        assert np.all(c.derivative(x) < 0)
    assert default_positive()(0.5) - default_negative()(0.5) > 3.0


def test_clamping_outside_unit_interval():
    c = default_negative()
    assert c(-0.5) == c(1e-6)
    assert c(1.5) == c(1 - 1e-6)


def test_scalar_value_matches_vector():
    x = np.linspace(0.0, 1.0, 37)
    for c in (default_negative(), default_positive()):
        assert np.allclose([c.value(xi) for xi in x], c(x), rtol=0, atol=1e-15)


def test_analytic_derivative_matches_difference():
    c = default_positive()
    x = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    fd = (c(x + h) - c(x - h)) / (2 * h)
    np.testing.assert_allclose(c.derivative(x), fd, rtol=1e-6)


@pytest.mark.parametrize("kwargs", [
    dict(table=([0.0], [1.0])),
    dict(table=([0.0, 0.0], [1.0, 2.0])),
    dict(terms=()),
    dict(terms=(("poly", (1.0,)),)),
    dict(terms=(("exp", (1.0, 2.0)),)),
    dict(terms=(("tanh", (1.0, 0.5, 0.0)),)),
])
def test_malformed_curves(kwargs):
    with pytest.raises(OcpError):
        OcpCurve("neg", **kwargs)


def test_electrode_tag():
    with pytest.raises(OcpError):
        OcpCurve("anode", terms=(("const", (1.0,)),))


def test_terms_text_roundtrip():
    c = default_negative()
    again = parse_terms("neg", format_terms(c))
    assert again.terms == c.terms


def test_parse_terms_errors():
    with pytest.raises(OcpError):
        parse_terms("neg", "exp 1,2,3")
    with pytest.raises(OcpError):
        parse_terms("neg", "exp:1,x,3")


def test_load_table(tmp_path):
    p = tmp_path / "ocp.csv"
    p.write_text("stoich,volts\n0,1.0\n0.5,0.6\n1,0.0\n")
    c = load_table("neg", p)
    assert c(0.5) == pytest.approx(0.6)
    p.write_text("stoich,volts\n0,1.0\n0.5,abc\n")
    with pytest.raises(OcpError, match=":3"):
        load_table("neg", p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=12), st.floats(0.0, 5.0))
def test_monotone_table_gives_monotone_curve(steps, v0):
    x = np.concatenate([[0.0], np.cumsum(steps)])
    x = x / x[-1]
    v = v0 - np.cumsum(np.r_[0.0, steps[::-1]])
    c = OcpCurve("pos", table=(x, v))
    xs = np.linspace(0, 1, 1001)
    u = c(xs)
    assert np.all(np.diff(u) <= 1e-12)
    # end knots sit on the clamp boundary, interior knots are reproduced exactly
    np.testing.assert_allclose(c(x[1:-1]), v[1:-1], rtol=0, atol=1e-12)
