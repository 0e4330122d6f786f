"""Single particle model and its pseudo-equilibrium reduction.

Sign convention: positive current discharges the cell, i.e. the negative
electrode delithiates and the positive electrode lithiates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import EXCHANGE_CURRENT_FLOOR
from .ocp import OcpCurve
from .params import GroupedParameterSet
from .radial import ModalRadial, RadialStepper
from .thermal import thermal_voltage_at, time_constant_at, time_constant_series


class CutoffEvent(Exception):
    """The state reached a stoichiometry rail; the current step cannot continue."""

    def __init__(self, message: str, electrode: str | None = None):
        super().__init__(message)
        self.electrode = electrode


@dataclass(frozen=True)
class SpmEqState:
    c_neg: float
    c_pos: float
    t: float = 0.0


@dataclass(frozen=True)
class SpmState:
    c_neg: np.ndarray
    c_pos: np.ndarray
    t: float = 0.0

    def averages(self, weights: np.ndarray) -> tuple[float, float]:
        return float(self.c_neg @ weights), float(self.c_pos @ weights)


def normalized_current(current: float, grouped: GroupedParameterSet) -> float:
    return current / grouped.i_ref


def spm_eq_step(state: SpmEqState, current: float, dt: float, grouped: GroupedParameterSet) -> SpmEqState:
    """Coulomb-count both electrode averages over ``dt`` at constant current."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    i = normalized_current(current, grouped)
    c_neg = state.c_neg - dt * i / grouped.neg.tau_c_s
    c_pos = state.c_pos + dt * i / grouped.pos.tau_c_s
    for name, c in (("neg", c_neg), ("pos", c_pos)):
        if not 0.0 <= c <= 1.0:
            raise CutoffEvent(f"{name} stoichiometry left [0, 1]: {c:.6g}", name)
    return SpmEqState(c_neg, c_pos, state.t + dt)


def spm_eq_voltage(state: SpmEqState, ocp_neg: OcpCurve, ocp_pos: OcpCurve) -> float:
    return ocp_pos(state.c_pos) - ocp_neg(state.c_neg)


def solid_time_constants(grouped: GroupedParameterSet, T: float | None, thermal: bool):
    """(tau_d_s, tau_k) per electrode and the thermal voltage at ``T``."""
    out = {}
    if thermal and T is not None:
        for name in ("neg", "pos"):
            g = grouped.region(name)
            out[name] = (
                time_constant_at(g.tau_d_s, g.E_tau_s, T, grouped.T_ref),
                time_constant_at(g.tau_k, g.E_tau_k, T, grouped.T_ref),
            )
        beta_inv = thermal_voltage_at(grouped.beta_inv, T, grouped.T_ref)
    else:
        for name in ("neg", "pos"):
            g = grouped.region(name)
            out[name] = (g.tau_d_s, g.tau_k)
        beta_inv = grouped.beta_inv
    return out, beta_inv


def exchange_current(tau_c_s: float, tau_k: float, c_ss, c_e=1.0):
    """Normalized exchange current; floored so the overpotential stays finite."""
    c = np.clip(c_ss, 0.0, 1.0)
    i0 = 3.0 * tau_c_s / tau_k * np.sqrt(c_e * c * (1.0 - c))
    return np.maximum(i0, EXCHANGE_CURRENT_FLOOR)


def spm_step(state: SpmState, current: float, dt: float, grouped: GroupedParameterSet,
             temperature: float | None = None, thermal: bool = False,
             steppers: dict | None = None) -> SpmState:
    """Implicit radial diffusion in both particles with uniform reaction current."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    i = normalized_current(current, grouped)
    taus, _ = solid_time_constants(grouped, temperature, thermal)
    out = {}
    for name, c, j in (("neg", state.c_neg, i), ("pos", state.c_pos, -i)):
        if steppers is not None and name in steppers:
            st = steppers[name]
        else:
            st = RadialStepper(c.size, taus[name][0], grouped.region(name).tau_c_s, dt)
        out[name] = st.advance(c, j)
    return SpmState(_clamp_profile(out["neg"], "neg"), _clamp_profile(out["pos"], "pos"), state.t + dt)


def _clamp_profile(c: np.ndarray, name: str) -> np.ndarray:
    lo, hi = c.min(), c.max()
    if lo < -1e-9 or hi > 1.0 + 1e-9:
        raise CutoffEvent(f"{name} particle concentration left [0, 1] ({lo:.3g}, {hi:.3g})", name)
    if lo < 0.0 or hi > 1.0:
        c = np.clip(c, 0.0, 1.0)
    return c


def overpotential(j, i0, beta_inv):
    """Symmetric Butler-Volmer overpotential for reaction current ``j``."""
    return beta_inv * np.arcsinh(np.asarray(j) / (2.0 * np.asarray(i0)))


def surface_stoichiometry(c_outer, j, tau_d_s, tau_c_s, n_r):
    """Extrapolate the outer-shell value to the surface with the flux condition."""
    return c_outer - 0.5 / n_r * tau_d_s / (3.0 * tau_c_s) * j


def terminal_voltage(c_ss_neg, c_ss_pos, i, grouped: GroupedParameterSet, ocp_neg: OcpCurve,
                     ocp_pos: OcpCurve, tau_k_neg, tau_k_pos, beta_inv):
    """Vectorized SPM voltage from surface stoichiometries; NaN where undefined."""
    i = np.asarray(i, dtype=float)
    v = -grouped.r_f * i
    for c, j, ocp, tau_c, tau_k, sign in ((c_ss_neg, i, ocp_neg, grouped.neg.tau_c_s, tau_k_neg, -1.0),
                                         (c_ss_pos, -i, ocp_pos, grouped.pos.tau_c_s, tau_k_pos, 1.0)):
        c = np.asarray(c, dtype=float)
        i0 = 3.0 * tau_c / tau_k * np.sqrt(np.clip(c * (1.0 - c), 0.0, None))
        bad = (c <= 0.0) | (c >= 1.0) | (i0 <= EXCHANGE_CURRENT_FLOOR)
        i0 = np.maximum(i0, EXCHANGE_CURRENT_FLOOR)
        v = v + sign * (ocp(c) + beta_inv * np.arcsinh(j / (2.0 * i0)))
        v = np.where(bad, np.nan, v)
    return v


def spm_voltage(state: SpmState, current: float, grouped: GroupedParameterSet,
                ocp_neg: OcpCurve, ocp_pos: OcpCurve, temperature: float | None = None,
                thermal: bool = False) -> float:
    """Terminal voltage: OCPs at the particle surfaces, overpotentials, ohmic drop."""
    i = normalized_current(current, grouped)
    taus, beta_inv = solid_time_constants(grouped, temperature, thermal)
    c_ss = {}
    for name, c, j in (("neg", state.c_neg, i), ("pos", state.c_pos, -i)):
        c_ss[name] = surface_stoichiometry(c[-1], j, taus[name][0], grouped.region(name).tau_c_s, c.size)
        if not 0.0 < c_ss[name] < 1.0:
            raise CutoffEvent(f"{name} surface stoichiometry at rail ({c_ss[name]:.6g})", name)
    v = terminal_voltage(c_ss["neg"], c_ss["pos"], i, grouped, ocp_neg, ocp_pos,
                         taus["neg"][1], taus["pos"][1], beta_inv)
    if not np.isfinite(v):
        raise CutoffEvent("exchange current vanished")
    return float(v)


@dataclass
class BatchRun:
    """Open-loop simulation over a current sequence.

    ``voltage[k]`` is the terminal voltage after step ``k``. When a cutoff
    occurs ``n_valid`` is the number of completed steps before it.
    """

    voltage: np.ndarray
    n_valid: int
    _state_at: object

    @property
    def complete(self) -> bool:
        return self.n_valid == self.voltage.size

    def state(self, k: int | None = None):
        """State after ``k`` steps (default: the last valid one)."""
        return self._state_at(self.n_valid if k is None else k)


def _first_invalid(ok: np.ndarray) -> int:
    bad = np.flatnonzero(~ok)
    return int(bad[0]) if bad.size else ok.size


class SpmEqModel:
    """Pseudo-equilibrium model; voltage is the OCP difference."""

    kind = "SPM_eq"

    def __init__(self, grouped: GroupedParameterSet, ocp_neg: OcpCurve, ocp_pos: OcpCurve):
        self.grouped, self.ocp_neg, self.ocp_pos = grouped, ocp_neg, ocp_pos

    def initial_state(self, soc_pair) -> SpmEqState:
        c_neg, c_pos = soc_pair
        return SpmEqState(float(c_neg), float(c_pos))

    def step(self, state, current, dt, T=None):
        return spm_eq_step(state, current, dt, self.grouped)

    def voltage(self, state, current, T=None):
        return spm_eq_voltage(state, self.ocp_neg, self.ocp_pos)

    def surface_range(self, state):
        return (min(state.c_neg, state.c_pos), max(state.c_neg, state.c_pos))

    def run_currents(self, state: SpmEqState, currents, dts, temps=None) -> BatchRun:
        g = self.grouped
        i = np.asarray(currents, dtype=float) / g.i_ref
        dts = np.broadcast_to(np.asarray(dts, dtype=float), i.shape)
        q = np.cumsum(dts * i)
        c_neg = state.c_neg - q / g.neg.tau_c_s
        c_pos = state.c_pos + q / g.pos.tau_c_s
        t = state.t + np.cumsum(dts)
        n_ok = _first_invalid((c_neg >= 0.0) & (c_neg <= 1.0) & (c_pos >= 0.0) & (c_pos <= 1.0))
        v = self.ocp_pos(c_pos) - self.ocp_neg(c_neg)

        def at(k):
            return state if k == 0 else SpmEqState(float(c_neg[k - 1]), float(c_pos[k - 1]), float(t[k - 1]))

        return BatchRun(np.asarray(v, dtype=float), n_ok, at)



class SpmModel:
    """Single particle model with cached radial operators."""

    kind = "SPM"

    def __init__(self, grouped: GroupedParameterSet, ocp_neg: OcpCurve, ocp_pos: OcpCurve,
                 n_r: int = 20, thermal: bool = False):
        if n_r < 4:
            raise ValueError("need at least 4 radial control volumes")
        self.grouped, self.ocp_neg, self.ocp_pos = grouped, ocp_neg, ocp_pos
        self.n_r, self.thermal = n_r, thermal
        self._cache: dict = {}
        self._modal = ModalRadial(n_r)

    def initial_state(self, soc_pair) -> SpmState:
        c_neg, c_pos = soc_pair
        return SpmState(np.full(self.n_r, float(c_neg)), np.full(self.n_r, float(c_pos)))

    def _steppers(self, dt, T):
        taus, _ = solid_time_constants(self.grouped, T, self.thermal)
        key = (dt, taus["neg"][0], taus["pos"][0])
        st = self._cache.get(key)
        if st is None:
            if len(self._cache) > 64:
                self._cache.clear()
            st = {name: RadialStepper(self.n_r, taus[name][0], self.grouped.region(name).tau_c_s, dt)
                  for name in ("neg", "pos")}
            self._cache[key] = st
        return st

    def step(self, state, current, dt, T=None):
        return spm_step(state, current, dt, self.grouped, T, self.thermal, self._steppers(dt, T))

    def voltage(self, state, current, T=None):
        return spm_voltage(state, current, self.grouped, self.ocp_neg, self.ocp_pos, T, self.thermal)

    def surface_range(self, state):
        return (min(state.c_neg[-1], state.c_pos[-1]), max(state.c_neg[-1], state.c_pos[-1]))

    def run_currents(self, state: SpmState, currents, dts, temps=None) -> BatchRun:
        """Open-loop run in modal coordinates; much cheaper than repeated :meth:`step`."""
        g = self.grouped
        i = np.asarray(currents, dtype=float) / g.i_ref
        N = i.size
        dts = np.broadcast_to(np.asarray(dts, dtype=float), (N,))
        if self.thermal and temps is not None:
            T = np.broadcast_to(np.asarray(temps, dtype=float), (N,))
            tau = {name: (time_constant_series(g.region(name).tau_d_s, g.region(name).E_tau_s, T, g.T_ref),
                          time_constant_series(g.region(name).tau_k, g.region(name).E_tau_k, T, g.T_ref))
                   for name in ("neg", "pos")}
            beta_inv = g.beta_inv * T / g.T_ref
        else:
            tau = {name: (g.region(name).tau_d_s, g.region(name).tau_k) for name in ("neg", "pos")}
            beta_inv = g.beta_inv
        hist, c_ss = {}, {}
        for name, c0, j in (("neg", state.c_neg, i), ("pos", state.c_pos, -i)):
            tau_c = g.region(name).tau_c_s
            Z = self._modal.history(self._modal.to_modal(c0), j, dts, tau[name][0], tau_c)
            hist[name] = Z
            c_ss[name] = surface_stoichiometry(Z @ self._modal.b, j, tau[name][0], tau_c, self.n_r)
        v = terminal_voltage(c_ss["neg"], c_ss["pos"], i, g, self.ocp_neg, self.ocp_pos,
                             tau["neg"][1], tau["pos"][1], beta_inv)
        n_ok = _first_invalid(np.isfinite(v))
        t = state.t + np.cumsum(dts)

        def at(k):
            if k == 0:
                return state
            return SpmState(self._modal.from_modal(hist["neg"][k - 1]),
                            self._modal.from_modal(hist["pos"][k - 1]), float(t[k - 1]))

        return BatchRun(np.asarray(v, dtype=float), n_ok, at)

    def run_cv(self, state: SpmState, dts, temps, controller):
        """Closed-loop run: ``controller(v_prev, dt) -> current`` is called before each step.

        Returns ``(voltages, currents, n_valid, end_state)``; the loop stops at
        the first step whose surface stoichiometry leaves (0, 1).
        """
        g = self.grouped
        N = len(dts)
        v_out = np.full(N, np.nan)
        I_out = np.full(N, np.nan)
        md = self._modal
        z = {"neg": md.to_modal(state.c_neg), "pos": md.to_modal(state.c_pos)}
        lam_cache: dict = {}
        t = state.t
        j_prev = None
        for k in range(N):
            dt = float(dts[k])
            T = float(temps[k]) if (self.thermal and temps is not None) else None
            taus, beta_inv = solid_time_constants(g, T, self.thermal)
            I = float(controller(None if k == 0 else v_out[k - 1], dt))
            i = I / g.i_ref
            v = -g.r_f * i
            z_new = {}
            for name, j, ocp, sign in (("neg", i, self.ocp_neg, -1.0), ("pos", -i, self.ocp_pos, 1.0)):
                tau_d, tau_k = taus[name]
                tau_c = g.region(name).tau_c_s
                key = (name, dt, tau_d)
                lam = lam_cache.get(key)
                if lam is None:
                    lam = lam_cache[key] = 1.0 / (1.0 + md.mu * (dt / tau_d))
                zn = lam * (z[name] - (dt / tau_c * j) * md.b)
                c_ss = float(zn @ md.b) - 0.5 / self.n_r * tau_d / (3.0 * tau_c) * j
                i0 = 3.0 * tau_c / tau_k * math.sqrt(max(c_ss * (1.0 - c_ss), 0.0))
                if not (0.0 < c_ss < 1.0) or i0 <= EXCHANGE_CURRENT_FLOOR:
                    return v_out, I_out, k, SpmState(md.from_modal(z["neg"]), md.from_modal(z["pos"]), t)
                v += sign * (ocp.value(c_ss) + beta_inv * math.asinh(j / (2.0 * i0)))
                z_new[name] = zn
            z = z_new
            t += dt
            v_out[k], I_out[k] = v, I
        return v_out, I_out, N, SpmState(md.from_modal(z["neg"]), md.from_modal(z["pos"]), t)
