import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2dident.defaults import SOC_FULL
from p2dident.radial import ModalRadial, RadialStepper, shell_volumes, stiffness
from p2dident.spm import (CutoffEvent, SpmEqModel, SpmEqState, SpmModel, exchange_current, overpotential,
                          solid_time_constants, spm_eq_step, spm_eq_voltage)


@pytest.fixture
def spm(grouped, ocps):
    return SpmModel(grouped, *ocps)


@pytest.fixture
def spm_eq(grouped, ocps):
    return SpmEqModel(grouped, *ocps)


def test_shell_volumes_sum_to_one():
    for n in (4, 20, 51):
        assert shell_volumes(n).sum() == pytest.approx(1.0, abs=1e-15)


def test_stiffness_annihilates_constants():
    K = stiffness(20)
    np.testing.assert_allclose(K @ np.ones(20), 0.0, atol=1e-12)
    np.testing.assert_allclose(K, K.T)


def test_radial_rejects_coarse_grid():
    with pytest.raises(ValueError):
        RadialStepper(3, 100.0, 1000.0, 1.0)


def test_eq_coulomb_counting(grouped):
    s = SpmEqState(0.8, 0.34)
    for _ in range(100):
        s = spm_eq_step(s, 3.0, 10.0, grouped)
    q = 3.0 * 1000.0 / grouped.i_ref
    assert s.c_neg == pytest.approx(0.8 - q / grouped.neg.tau_c_s, rel=1e-13)
    assert s.c_pos == pytest.approx(0.34 + q / grouped.pos.tau_c_s, rel=1e-13)


def test_eq_rest_voltage_is_ocp_difference(ocps):
    s = SpmEqState(*SOC_FULL)
    assert spm_eq_voltage(s, *ocps) == pytest.approx(ocps[1](0.34) - ocps[0](0.8), abs=1e-15)


def test_eq_cutoff(grouped):
    with pytest.raises(CutoffEvent) as exc:
        spm_eq_step(SpmEqState(1e-4, 0.5), 3.0, 10.0, grouped)
    assert exc.value.electrode == "neg"


def test_eq_batch_matches_steps(spm_eq):
    I = np.r_[np.full(50, 1.5), np.zeros(10), np.full(40, -0.6)]
    dts = np.full(I.size, 7.0)
    run = spm_eq.run_currents(spm_eq.initial_state(SOC_FULL), I, dts)
    s = spm_eq.initial_state(SOC_FULL)
    for k in range(I.size):
        s = spm_eq.step(s, I[k], dts[k])
        assert run.voltage[k] == pytest.approx(spm_eq.voltage(s, I[k]), abs=1e-13)
    assert run.complete


def test_zero_current_keeps_uniform_profile(spm):
    s0 = spm.initial_state(SOC_FULL)
    s = s0
    for _ in range(100):
        s = spm.step(s, 0.0, 10.0)
    np.testing.assert_array_equal(s.c_neg, s0.c_neg)
    np.testing.assert_array_equal(s.c_pos, s0.c_pos)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-6.0, 6.0), min_size=1, max_size=40), st.floats(0.5, 20.0))
def test_particle_average_follows_charge(currents, dt):
    # the discrete update conserves the r^2-weighted content exactly
    from p2dident.defaults import nominal_grouped, nominal_ocps
    g = nominal_grouped()
    m = SpmModel(g, *nominal_ocps())
    s = m.initial_state((0.5, 0.5))
    w = shell_volumes(m.n_r)
    q = 0.0
    for I in currents:
        s = m.step(s, I, dt)
        q += I * dt / g.i_ref
    assert float(s.c_neg @ w) == pytest.approx(0.5 - q / g.neg.tau_c_s, abs=1e-12)
    assert float(s.c_pos @ w) == pytest.approx(0.5 + q / g.pos.tau_c_s, abs=1e-12)


def test_quasi_steady_surface_offset(grouped):
    # long CC: c(r) -> cbar + A (r^2 - 3/5) with dc/dr(1) = -tau_d j/(3 tau_c),
    # hence c_surf - cbar = -tau_d j / (15 tau_c)
    g = grouped.neg
    j = 0.5
    st_ = RadialStepper(40, g.tau_d_s, g.tau_c_s, 1.0)
    c = np.full(40, 0.8)
    for _ in range(int(3 * g.tau_d_s)):
        c = st_.advance(c, j)
    offset = st_.surface(c, j) - st_.average(c)
    assert offset == pytest.approx(-g.tau_d_s * j / (15 * g.tau_c_s), rel=5e-3)


def test_modal_matches_stepper(grouped):
    g = grouped.pos
    md = ModalRadial(20)
    st_ = RadialStepper(20, g.tau_d_s, g.tau_c_s, 2.0)
    rng = np.random.default_rng(0)
    j = rng.normal(size=200)
    c = np.linspace(0.3, 0.4, 20)
    Z = md.history(md.to_modal(c), j, 2.0, g.tau_d_s, g.tau_c_s)
    for k in range(200):
        c = st_.advance(c, j[k])
    np.testing.assert_allclose(md.from_modal(Z[-1]), c, atol=1e-13)


def test_batch_run_matches_stepping(spm):
    I = np.r_[np.full(300, 3.0), np.zeros(100), np.full(200, -1.0)]
    dts = np.r_[np.ones(300), np.full(300, 10.0)]
    s = spm.initial_state(SOC_FULL)
    run = spm.run_currents(s, I, dts)
    v = []
    for k in range(I.size):
        s = spm.step(s, I[k], dts[k])
        v.append(spm.voltage(s, I[k]))
    np.testing.assert_allclose(run.voltage, v, atol=1e-12)
    np.testing.assert_allclose(run.state().c_neg, s.c_neg, atol=1e-13)


def test_batch_run_reports_cutoff(spm):
    run = spm.run_currents(spm.initial_state(SOC_FULL), np.full(2000, 9.0), 10.0)
    assert not run.complete and 0 < run.n_valid < 2000
    assert np.all(np.isfinite(run.voltage[: run.n_valid]))


def test_closed_loop_matches_stepping(spm):
    from p2dident.protocol import PidGains, PidState, pid_current
    gains = PidGains.default(3.0, 3.0)
    s0 = spm.step(spm.initial_state(SOC_FULL), 3.0, 1.0)
    v0 = spm.voltage(s0, 3.0)
    v_ref = v0 - 0.05

    class Ctl:
        def __init__(self):
            self.ctrl, self.v = PidState(), v0

        def __call__(self, v_prev, dt):
            if v_prev is not None:
                self.v = v_prev
            u, self.ctrl = pid_current(gains, self.v, v_ref, self.ctrl, dt)
            return -u

    vs, Is, n, _ = spm.run_cv(s0, np.ones(200), None, Ctl())
    ctl, s = Ctl(), s0
    for k in range(200):
        I = ctl(None if k == 0 else v, 1.0)
        s = spm.step(s, I, 1.0)
        v = spm.voltage(s, I)
        assert vs[k] == pytest.approx(v, abs=1e-12)
        assert Is[k] == pytest.approx(I, abs=1e-12)
    assert n == 200


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(1e-3, 100), st.floats(0.01, 0.1))
def test_overpotential_inverts_butler_volmer(j, i0, beta_inv):
    eta = float(overpotential(j, i0, beta_inv))
    assert 2 * i0 * math.sinh(eta / beta_inv) == pytest.approx(j, rel=1e-9, abs=1e-12)


def test_exchange_current_floor():
    assert exchange_current(5000.0, 4000.0, 0.0) == pytest.approx(1e-12)
    assert exchange_current(5000.0, 4000.0, 0.5) == pytest.approx(3 * 5000 / 4000 * 0.5)


def test_voltage_decreases_with_discharge_current(spm):
    s = spm.initial_state(SOC_FULL)
    v = [spm.voltage(s, I) for I in (-3.0, 0.0, 3.0, 9.0)]
    assert np.all(np.diff(v) < 0)


def test_thermal_at_reference_is_isothermal(grouped, ocps):
    a = SpmModel(grouped, *ocps)
    b = SpmModel(grouped, *ocps, thermal=True)
    s = a.initial_state(SOC_FULL)
    for _ in range(30):
        s = a.step(s, 3.0, 1.0)
    assert b.voltage(s, 3.0, grouped.T_ref) == a.voltage(s, 3.0)


def test_warmer_cell_has_faster_time_constants(grouped):
    cold, _ = solid_time_constants(grouped, grouped.T_ref, True)
    warm, bi = solid_time_constants(grouped, grouped.T_ref + 10, True)
    for name in ("neg", "pos"):
        assert warm[name][0] < cold[name][0] and warm[name][1] < cold[name][1]
    assert bi > grouped.beta_inv
