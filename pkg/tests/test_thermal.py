import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from p2dident.constants import GAS_CONSTANT
from p2dident.thermal import ArrheniusLaw, arrhenius, thermal_voltage_at, time_constant_at, time_constant_series


def test_reference_temperature_returns_reference():
    assert arrhenius(ArrheniusLaw(2.0, 5e4), 298.15) == 2.0


def test_known_ratio():
    # 10 K above reference with 50 kJ/mol
    r = arrhenius(ArrheniusLaw(1.0, 5e4), 308.15)
    assert r == pytest.approx(math.exp(5e4 / GAS_CONSTANT * (1 / 298.15 - 1 / 308.15)), rel=1e-14)
    assert 1.9 < r < 1.95


def test_invalid_temperatures():
    with pytest.raises(ValueError):
        arrhenius(ArrheniusLaw(1.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        ArrheniusLaw(1.0, 1.0, T_ref=-1.0)


@given(st.floats(1.0, 1e4), st.floats(0, 1e5), st.floats(250, 350))
def test_time_constant_is_reciprocal_of_rate(tau, E, T):
    rate = arrhenius(ArrheniusLaw(1.0, E), T)
    assert time_constant_at(tau, E, T, 298.15) * rate == pytest.approx(tau, rel=1e-12)


def test_series_matches_scalar():
    T = np.linspace(280, 320, 9)
    s = time_constant_series(100.0, 3e4, T, 298.15)
    np.testing.assert_allclose(s, [time_constant_at(100.0, 3e4, t, 298.15) for t in T], rtol=1e-14)


def test_thermal_voltage_linear_in_T():
    assert thermal_voltage_at(0.05, 2 * 298.15, 298.15) == pytest.approx(0.1)
