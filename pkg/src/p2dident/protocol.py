"""Cycling protocols: CC, CV (PID controlled) and rest steps.

Sign convention: positive current discharges the cell. The controller
works on ``e = v_ref - v``; its output is the charging current, so the
applied current is its negative.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .spm import CutoffEvent
from .thermal import ArrheniusLaw, arrhenius  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

KINDS = ("CC", "CV", "Rest")


class ProtocolError(ValueError):
    """Malformed step list."""


@dataclass(frozen=True)
class ProtocolStep:
    """One step of a cycling program.

    ``value`` is the current (A) of a CC step or the target voltage of a CV
    step and is ignored for rests.
    """

    kind: str
    value: float = 0.0
    duration: float | None = None
    v_cutoff: float | None = None
    i_cutoff: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown step kind {self.kind!r}")
        if self.duration is None and self.v_cutoff is None and self.i_cutoff is None:
            raise ProtocolError(f"{self.kind} step needs a termination condition")
        if self.duration is not None and not self.duration > 0:
            raise ProtocolError("step duration must be positive")
        if self.kind == "Rest" and self.duration is None:
            raise ProtocolError("rest step needs a duration")
        if self.kind == "CC" and self.value == 0.0 and self.duration is None:
            raise ProtocolError("zero-current CC step needs a duration")
        if self.kind == "CV" and self.v_cutoff is not None:
            raise ProtocolError("CV step terminates on current or time, not voltage")

    @property
    def flag(self) -> str:
        return "REST" if self.kind == "Rest" or (self.kind == "CC" and self.value == 0.0) else self.kind


def validate_steps(steps, v_min: float, v_max: float) -> None:
    if not steps:
        raise ProtocolError("protocol has no steps")
    for k, s in enumerate(steps):
        if s.kind == "CV" and not v_min <= s.value <= v_max:
            raise ProtocolError(f"step {k}: CV target {s.value} V outside [{v_min}, {v_max}]")


@dataclass(frozen=True)
class PidGains:
    K_p: float
    K_i: float
    K_d: float = 0.0
    windup: float = math.inf

    def __post_init__(self):
        for f in ("K_p", "K_i", "K_d", "windup"):
            if not getattr(self, f) >= 0:
                raise ProtocolError(f"PID {f} must be non-negative")

    @classmethod
    def default(cls, i_1c: float, i_max: float = 0.0) -> "PidGains":
        """Gains per volt of error scaled by the 1C current.

        The integral clamp is twice the larger of the 1C current and the
        largest programmed current, so a bumpless hand-over from any CC step
        is not cut short.
        """
        return cls(K_p=10.0 * i_1c, K_i=20.0 * i_1c, K_d=0.0, windup=2.0 * max(i_1c, abs(i_max)))


@dataclass
class PidState:
    integral: float = 0.0
    e_prev: float | None = None


def pid_current(gains: PidGains, v_meas: float, v_ref: float, ctrl: PidState, dt: float = 1.0):
    """Discrete PID: trapezoidal integral, backward-difference derivative.

    Returns the controller output (A) and the updated controller state. The
    integral term is clamped to ``gains.windup``.
    """
    e = v_ref - v_meas
    e_prev = e if ctrl.e_prev is None else ctrl.e_prev
    integral = ctrl.integral + 0.5 * dt * (e + e_prev)
    if gains.K_i > 0 and math.isfinite(gains.windup):
        lim = gains.windup / gains.K_i
        integral = min(max(integral, -lim), lim)
    deriv = (e - e_prev) / dt if ctrl.e_prev is not None else 0.0
    u = gains.K_p * e + gains.K_i * integral + gains.K_d * deriv
    return u, PidState(integral, e)


def bumpless_state(gains: PidGains, v_meas: float, v_ref: float, current: float) -> PidState:
    """Controller state whose first output reproduces the applied ``current``."""
    e = v_ref - v_meas
    if gains.K_i == 0:
        return PidState(0.0, e)
    integral = (-current - gains.K_p * e) / gains.K_i
    if math.isfinite(gains.windup):
        lim = gains.windup / gains.K_i
        integral = min(max(integral, -lim), lim)
    return PidState(integral, e)


class TemperatureSignal:
    """Piecewise-linear temperature input; constant when no table is given."""

    def __init__(self, times=None, temps=None, T_const: float = 298.15):
        if times is None:
            self.times = None
            self.T_const = float(T_const)
        else:
            self.times = np.asarray(times, dtype=float)
            self.temps = np.asarray(temps, dtype=float)
            if self.times.shape != self.temps.shape or self.times.size == 0:
                raise ProtocolError("temperature table columns differ in length")
            if np.any(np.diff(self.times) <= 0):
                raise ProtocolError("temperature table times must increase")
            if np.any(self.temps <= 0):
                raise ProtocolError("temperatures must be positive")

    def __call__(self, t):
        if self.times is None:
            return self.T_const if np.ndim(t) == 0 else np.full(np.shape(t), self.T_const)
        out = np.interp(t, self.times, self.temps)
        return float(out) if np.ndim(out) == 0 else out

    def series(self, t0: float, T0: float, dts, current: float) -> np.ndarray:
        """Temperatures at the ends of consecutive steps starting at ``t0``."""
        return np.asarray(self(t0 + np.cumsum(dts)), dtype=float)


class HeatingLag:
    """First-order lag towards ``T_amb + gain * (I / i_1c)**2``.

    Used to give synthetic data a current-dependent surface temperature; the
    simulated models still treat the temperature as an input.
    """

    def __init__(self, T_amb: float, i_1c: float, gain: float = 1.0, tau: float = 600.0):
        if not (T_amb > 0 and i_1c > 0 and tau > 0 and gain >= 0):
            raise ProtocolError("invalid heating-lag settings")
        self.T_amb, self.i_1c, self.gain, self.tau = T_amb, i_1c, gain, tau
        self.T_const = T_amb

    def series(self, t0: float, T0: float, dts, current: float) -> np.ndarray:
        dts = np.asarray(dts, dtype=float)
        T_ss = self.T_amb + self.gain * (current / self.i_1c) ** 2
        elapsed = np.cumsum(dts)
        return T_ss + (T0 - T_ss) * np.exp(-elapsed / self.tau)


def default_dt(current: float, i_1c: float) -> float:
    """1 s above C/2, 10 s at or below."""
    return 1.0 if abs(current) > 0.5 * i_1c * (1 + 1e-12) else 10.0


CV_DT = 1.0


@dataclass
class Trace:
    t: np.ndarray
    I: np.ndarray
    v: np.ndarray
    T: np.ndarray
    flag: np.ndarray
    step: np.ndarray
    c_ss_min: np.ndarray
    c_ss_max: np.ndarray
    events: list = field(default_factory=list)
    final_state: object = None

    def __len__(self):
        return self.t.size

    def select(self, mask) -> "Trace":
        return Trace(self.t[mask], self.I[mask], self.v[mask], self.T[mask], self.flag[mask],
                     self.step[mask], self.c_ss_min[mask], self.c_ss_max[mask], list(self.events))

    def segments(self):
        """(start, stop) index ranges of consecutive samples of one protocol step."""
        if self.t.size == 0:
            return []
        cuts = np.flatnonzero(np.diff(self.step) != 0) + 1
        edges = np.concatenate([[0], cuts, [self.t.size]])
        return list(zip(edges[:-1].tolist(), edges[1:].tolist()))


class _Recorder:
    def __init__(self):
        self.rows = {k: [] for k in ("t", "I", "v", "T", "flag", "step", "lo", "hi")}
        self.events = []

    def add(self, t, I, v, T, flag, step, rng):
        r = self.rows
        r["t"].append(t)
        r["I"].append(I)
        r["v"].append(v)
        r["T"].append(T)
        r["flag"].append(flag)
        r["step"].append(step)
        r["lo"].append(rng[0])
        r["hi"].append(rng[1])

    def trace(self, state) -> Trace:
        r = self.rows
        return Trace(np.array(r["t"], dtype=float), np.array(r["I"], dtype=float),
                     np.array(r["v"], dtype=float), np.array(r["T"], dtype=float),
                     np.array(r["flag"], dtype=object), np.array(r["step"], dtype=int),
                     np.array(r["lo"], dtype=float), np.array(r["hi"], dtype=float),
                     self.events, state)


def _step_dts(duration: float | None, dt: float, horizon: float) -> np.ndarray:
    total = horizon if duration is None else duration
    n = int(math.floor(total / dt + 1e-9))
    dts = np.full(n, dt)
    rem = total - n * dt
    if rem > 1e-9 * dt:
        dts = np.append(dts, rem)
    return dts


def run_protocol(model, steps, soc_pair=None, state=None, T_signal: TemperatureSignal | None = None,
                 gains: PidGains | None = None, i_1c: float | None = None,
                 horizon: float = 48 * 3600.0, v_limits=None, step_offset: int = 0) -> Trace:
    """Simulate ``steps`` in order and return the sampled trace.

    ``horizon`` bounds steps that only terminate on a voltage or current
    condition. A stoichiometry rail ends the current step and is recorded
    in ``Trace.events``; the program continues with the next step.
    """
    if not steps:
        raise ProtocolError("protocol has no steps")
    if v_limits is not None:
        validate_steps(steps, *v_limits)
    i_1c = model.grouped.i_ref if i_1c is None else i_1c
    if gains is None:
        i_max = max((abs(s.value) for s in steps if s.kind == "CC"), default=0.0)
        gains = PidGains.default(i_1c, i_max)
    T_signal = T_signal or TemperatureSignal(T_const=model.grouped.T_ref)
    T_start = getattr(state, "T", None) if state is not None else None
    if state is None:
        if soc_pair is None:
            raise ProtocolError("need an initial state or stoichiometry pair")
        state = model.initial_state(soc_pair)
    rec = _Recorder()
    t = float(getattr(state, "t", 0.0))
    T0 = float(T_start) if T_start is not None else (
        T_signal(t) if isinstance(T_signal, TemperatureSignal) else T_signal.T_const)
    I_prev = 0.0
    v_prev = float(model.voltage(state, 0.0, T0))
    rec.add(t, 0.0, v_prev, T0, "REST", step_offset - 1, model.surface_range(state))
    clock = _Clock(t, T0, v_prev, 0.0)

    for k, st in enumerate(steps):
        idx = step_offset + k
        if st.kind == "CV":
            state = _run_cv(model, st, state, clock, T_signal, gains, i_1c, horizon, rec, idx)
        else:
            I = 0.0 if st.kind == "Rest" else float(st.value)
            state = _run_cc(model, st, I, state, clock, T_signal, i_1c, horizon, rec, idx)
    return rec.trace(state)


@dataclass
class _Clock:
    t: float
    T: float
    v: float
    I: float


def _crossed(v, v_cut, I) -> np.ndarray:
    return v <= v_cut if I > 0 else v >= v_cut


def _run_cc(model, st, I, state, clock, T_signal, i_1c, horizon, rec, idx):
    dts = _step_dts(st.duration, default_dt(I, i_1c), horizon)
    flag = st.flag
    v_cut = st.v_cutoff if I != 0.0 else None
    clock.I = I
    if hasattr(model, "run_currents"):
        # Open-loop batch; chunked so that early terminations stay cheap.
        pos = 0
        while pos < dts.size:
            chunk = dts[pos: pos + 4096]
            times = clock.t + np.cumsum(chunk)
            temps = T_signal.series(clock.t, clock.T, chunk, I)
            run = model.run_currents(state, np.full(chunk.size, I), chunk, temps)
            n = run.n_valid
            stop = n
            if v_cut is not None:
                hit = np.flatnonzero(_crossed(run.voltage[:n], v_cut, I))
                if hit.size:
                    stop = int(hit[0]) + 1
            for m in range(stop):
                rec.add(float(times[m]), I, float(run.voltage[m]), float(temps[m]), flag, idx,
                        model.surface_range(run.state(m + 1)))
            state = run.state(stop)
            if stop:
                clock.t, clock.T, clock.v = float(times[stop - 1]), float(temps[stop - 1]), float(run.voltage[stop - 1])
            if stop < chunk.size:
                if stop == n:
                    rec.events.append((clock.t, idx, "stoichiometry limit"))
                    log.info("cutoff at t=%.1f s in step %d", clock.t, idx)
                return state
            pos += chunk.size
        return state
    for dt in dts:
        T_new = float(T_signal.series(clock.t, clock.T, [dt], I)[0])
        try:
            new = model.step(state, I, dt, T_new)
            v = float(model.voltage(new, I, T_new))
        except CutoffEvent as exc:
            rec.events.append((clock.t, idx, str(exc)))
            log.info("cutoff at t=%.1f s in step %d: %s", clock.t, idx, exc)
            return state
        state = new
        clock.t, clock.T, clock.v = clock.t + dt, T_new, v
        rec.add(clock.t, I, v, T_new, flag, idx, model.surface_range(state))
        if v_cut is not None and _crossed(v, v_cut, I):
            break
    return state


def _run_cv(model, st, state, clock, T_signal, gains, i_1c, horizon, rec, idx):
    i_cut = st.i_cutoff if st.i_cutoff is not None else (i_1c / 50.0 if st.duration is None else None)
    end = clock.t + (horizon if st.duration is None else st.duration)
    ctrl = bumpless_state(gains, clock.v, st.value, clock.I)
    while clock.t < end - 1e-9:
        dt = min(CV_DT, end - clock.t)
        u, ctrl = pid_current(gains, clock.v, st.value, ctrl, dt)
        I = -u
        T_new = float(T_signal.series(clock.t, clock.T, [dt], I)[0])
        try:
            new = model.step(state, I, dt, T_new)
            v = float(model.voltage(new, I, T_new))
        except CutoffEvent as exc:
            rec.events.append((clock.t, idx, str(exc)))
            return state
        state = new
        clock.t, clock.T, clock.v, clock.I = clock.t + dt, T_new, v, I
        rec.add(clock.t, I, v, T_new, "CV", idx, model.surface_range(state))
        if i_cut is not None and abs(I) <= i_cut:
            break
    return state


# -- standard programs ----------------------------------------------------------

DEFAULT_RATES = (("C/20", 1 / 20), ("C/5", 1 / 5), ("C/3", 1 / 3), ("C/2", 1 / 2), ("1C", 1.0), ("3C", 3.0))
REST_S = 1800.0


def cccv_block(rate: float, i_1c: float, v_min: float, v_max: float, label: str = "",
               rest: float = REST_S, i_cutoff: float | None = None) -> list[ProtocolStep]:
    """Discharge CC-CV, rest, charge CC-CV, rest at one C-rate."""
    I = rate * i_1c
    i_cut = i_1c / 50.0 if i_cutoff is None else i_cutoff
    return [
        ProtocolStep("CC", I, v_cutoff=v_min, label=label),
        ProtocolStep("CV", v_min, i_cutoff=i_cut, label=label),
        ProtocolStep("Rest", duration=rest, label=label),
        ProtocolStep("CC", -I, v_cutoff=v_max, label=label),
        ProtocolStep("CV", v_max, i_cutoff=i_cut, label=label),
        ProtocolStep("Rest", duration=rest, label=label),
    ]


def six_rate_program(i_1c: float, v_min: float, v_max: float, rates=DEFAULT_RATES):
    """Blocks of CCCV cycles from C/20 to 3C, each listed as (label, rate, steps)."""
    return [(label, rate, cccv_block(rate, i_1c, v_min, v_max, label)) for label, rate in rates]
