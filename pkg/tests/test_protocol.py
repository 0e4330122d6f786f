import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2dident.defaults import SOC_FULL, V_MAX, V_MIN
from p2dident.protocol import (CV_DT, HeatingLag, PidGains, PidState, ProtocolError, ProtocolStep,
                               TemperatureSignal, _step_dts, bumpless_state, cccv_block, default_dt, pid_current,
                               run_protocol, six_rate_program, validate_steps)
from p2dident.spm import SpmModel


@pytest.fixture
def spm(grouped, ocps):
    return SpmModel(grouped, *ocps)


@pytest.mark.parametrize("kwargs", [
    dict(kind="CCV", value=1.0, duration=1.0),
    dict(kind="CC", value=1.0),
    dict(kind="Rest", v_cutoff=3.0),
    dict(kind="CV", value=4.0, v_cutoff=3.9),
    dict(kind="CC", value=0.0, v_cutoff=3.0),
    dict(kind="CC", value=1.0, duration=-5.0),
])
def test_invalid_steps(kwargs):
    with pytest.raises(ProtocolError):
        ProtocolStep(**kwargs)


def test_flags():
    assert ProtocolStep("CC", 0.0, duration=5).flag == "REST"
    assert ProtocolStep("Rest", duration=5).flag == "REST"
    assert ProtocolStep("CV", 4.0, i_cutoff=0.1).flag == "CV"


def test_validate_steps_window():
    validate_steps([ProtocolStep("CV", 4.0, i_cutoff=0.1)], 3.0, 4.2)
    with pytest.raises(ProtocolError):
        validate_steps([ProtocolStep("CV", 4.5, i_cutoff=0.1)], 3.0, 4.2)
    with pytest.raises(ProtocolError):
        validate_steps([], 3.0, 4.2)


def test_proportional_only():
    g = PidGains(K_p=2.0, K_i=0.0)
    u, _ = pid_current(g, 4.0, 4.1, PidState())
    assert u == pytest.approx(0.2)


def test_trapezoidal_integral():
    g = PidGains(K_p=0.0, K_i=1.0)
    s = PidState(0.0, 0.1)
    u, s = pid_current(g, 4.0, 4.2, s, dt=2.0)
    assert s.integral == pytest.approx(0.5 * 2.0 * (0.2 + 0.1))
    assert u == pytest.approx(0.3)


def test_derivative_term():
    g = PidGains(K_p=0.0, K_i=0.0, K_d=3.0)
    u, _ = pid_current(g, 4.0, 4.2, PidState(0.0, 0.1), dt=0.5)
    assert u == pytest.approx(3.0 * (0.2 - 0.1) / 0.5)


def test_negative_gain_rejected():
    with pytest.raises(ProtocolError):
        PidGains(K_p=-1.0, K_i=0.0)


def test_default_gains_scale_with_1c():
    g = PidGains.default(3.0, 9.0)
    assert (g.K_p, g.K_i, g.K_d, g.windup) == (30.0, 60.0, 0.0, 18.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=50), st.floats(0.1, 5.0))
def test_integral_stays_clamped(errors, dt):
    g = PidGains(1.0, 2.0, 0.0, windup=0.5)
    s = PidState()
    for e in errors:
        u, s = pid_current(g, 0.0, e, s, dt)
        assert abs(s.integral) <= g.windup / g.K_i + 1e-15
        assert abs(u - g.K_p * e) <= g.windup + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-9.0, 9.0), st.floats(3.0, 4.3))
def test_bumpless_start_reproduces_current(current, v):
    g = PidGains.default(3.0, 9.0)
    s = bumpless_state(g, v, v, current)
    u, _ = pid_current(g, v, v, s)
    assert -u == pytest.approx(current, abs=1e-12)


def test_temperature_signal():
    sig = TemperatureSignal([0.0, 100.0], [300.0, 310.0])
    assert sig(50.0) == pytest.approx(305.0)
    np.testing.assert_allclose(sig.series(0.0, 300.0, [10.0, 10.0], 1.0), [301.0, 302.0])
    assert TemperatureSignal(T_const=290.0)(12.0) == 290.0
    with pytest.raises(ProtocolError):
        TemperatureSignal([0.0, 0.0], [300.0, 300.0])


def test_heating_lag_relaxes_to_steady_state():
    h = HeatingLag(298.15, 3.0, 1.0, 600.0)
    T = h.series(0.0, 298.15, np.full(100, 60.0), 9.0)
    assert T[-1] == pytest.approx(298.15 + 9.0, abs=1e-3)
    assert np.all(np.diff(T) > 0)
    T_back = h.series(0.0, 307.0, np.full(100, 60.0), 0.0)
    assert T_back[-1] == pytest.approx(298.15, abs=1e-3)


def test_step_dts_cover_duration():
    d = _step_dts(25.0, 10.0, 1e9)
    assert d.sum() == pytest.approx(25.0) and d[-1] == pytest.approx(5.0)
    assert default_dt(3.0, 3.0) == 1.0 and default_dt(1.5, 3.0) == 10.0 and CV_DT == 1.0


def test_rest_only_protocol_is_flat(spm):
    tr = run_protocol(spm, [ProtocolStep("Rest", duration=600.0)], soc_pair=SOC_FULL, i_1c=3.0)
    assert np.ptp(tr.v) == 0.0
    assert set(tr.flag) == {"REST"}
    assert tr.t[-1] == pytest.approx(600.0)


def test_cccv_block_flags_and_cv_behaviour(spm):
    steps = cccv_block(1.0, 3.0, V_MIN, V_MAX, "1C")
    tr = run_protocol(spm, steps, soc_pair=SOC_FULL, i_1c=3.0)
    order = [tr.flag[a] for a, _ in tr.segments()][1:]
    assert order == ["CC", "CV", "REST", "CC", "CV", "REST"]
    for a, b in tr.segments():
        if tr.flag[a] != "CV":
            continue
        target = V_MIN if tr.I[a] > 0 else V_MAX
        late = tr.t[a:b] - tr.t[a] >= 60.0
        assert np.max(np.abs(tr.v[a:b][late] - target)) <= 2e-3
        assert np.all(np.diff(np.abs(tr.I[a:b])) <= 1e-9)
        assert abs(tr.I[b - 1]) <= 3.0 / 50.0
    assert not tr.events


def test_cc_stops_at_cutoff(spm):
    tr = run_protocol(spm, [ProtocolStep("CC", 3.0, v_cutoff=3.9)], soc_pair=SOC_FULL, i_1c=3.0)
    assert tr.v[-1] <= 3.9 < tr.v[-2]


def test_rail_is_recorded_and_program_continues(spm):
    steps = [ProtocolStep("CC", 3.0, duration=4 * 3600.0), ProtocolStep("Rest", duration=100.0)]
    tr = run_protocol(spm, steps, soc_pair=SOC_FULL, i_1c=3.0)
    assert len(tr.events) == 1
    assert tr.flag[-1] == "REST"


def test_six_rate_program():
    prog = six_rate_program(3.0, V_MIN, V_MAX)
    assert [p[0] for p in prog] == ["C/20", "C/5", "C/3", "C/2", "1C", "3C"]
    assert prog[-1][2][0].value == pytest.approx(9.0)


def test_empty_protocol(spm):
    with pytest.raises(ProtocolError):
        run_protocol(spm, [], soc_pair=SOC_FULL)
