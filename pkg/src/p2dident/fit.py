"""Staged identification of grouped parameters from cycling data.

Data are cut into segments at current discontinuities and each segment is
assigned a scenario by its C-rate. A scenario fixes the model used to fit it
and the parameters it is allowed to move:

=========  ===================  ========  ========================================
scenario   C-rate               model     parameters
=========  ===================  ========  ========================================
eq         <= C/20              SPM_eq    tau_c_s (pos, neg)
s          (C/20, C/2]          SPM       tau_d_s, tau_k (pos, neg), r_f
e          (C/2, 1C]            P2D       kappa, tau_d_e (shared across regions)
T          > 1C                 P2DT      E_tau_s, E_tau_k (pos, neg)
=========  ===================  ========  ========================================

Simulations replay the data: the measured current drives CC and rest
sections and a PID controller at the CV target drives CV sections.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .data import DataSet
from .ocp import OcpCurve
from .p2d import NumericalError, P2dGrid, P2dModel
from .params import GroupedParameterSet
from .protocol import PidGains, bumpless_state, pid_current
from .spm import CutoffEvent, SpmEqModel, SpmModel

log = logging.getLogger(__name__)

PENALTY = 1e6  # V^2, objective value of a simulation that hits a limit


class ConfigError(ValueError):
    """Inconsistent identification settings."""


class StageFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    rate_lo: float  # exclusive (inclusive for the lowest scenario)
    rate_hi: float  # inclusive
    model: str
    params: tuple[str, ...]

    def contains(self, rate: float) -> bool:
        tol = 1e-9
        lo_ok = rate >= self.rate_lo * (1 - tol) if self.rate_lo == 0 else rate > self.rate_lo * (1 + tol)
        return lo_ok and rate <= self.rate_hi * (1 + tol)


SCENARIOS = {
    "eq": Scenario("eq", 0.0, 1 / 20, "SPM_eq", ("pos.tau_c_s", "neg.tau_c_s")),
    "s": Scenario("s", 1 / 20, 1 / 2, "SPM", ("pos.tau_d_s", "neg.tau_d_s", "pos.tau_k", "neg.tau_k", "r_f")),
    "e": Scenario("e", 1 / 2, 1.0, "P2D", ("kappa", "tau_d_e")),
    "T": Scenario("T", 1.0, math.inf, "P2DT", ("pos.E_tau_s", "neg.E_tau_s", "pos.E_tau_k", "neg.E_tau_k")),
}
STAGE_ORDER = ("eq", "s", "e", "T")

# Parameters fitted as one value shared by the three regions.
SHARED = {"kappa": ("neg", "sep", "pos"), "tau_d_e": ("neg", "sep", "pos")}


def scenario_for_rate(rate: float) -> Scenario:
    for name in STAGE_ORDER:
        if SCENARIOS[name].contains(rate):
            return SCENARIOS[name]
    raise ConfigError(f"no scenario for C-rate {rate}")


# -- parameter access ----------------------------------------------------------

def get_param(grouped: GroupedParameterSet, key: str) -> float:
    """Value of a fitted parameter; shared keys report the separator value."""
    if key in SHARED:
        return getattr(grouped.sep, key)
    return grouped.flat()[key]


def with_params(grouped: GroupedParameterSet, values: dict) -> GroupedParameterSet:
    """Grouped set with ``values`` substituted.

    A shared key sets the separator value and rescales the electrode values
    by the same factor, so the nominal ratios between regions are preserved.
    """
    flat = {}
    for key, val in values.items():
        val = float(val)
        if key in SHARED:
            ref = getattr(grouped.sep, key)
            for region in SHARED[key]:
                flat[f"{region}.{key}"] = val if region == "sep" else getattr(grouped.region(region), key) * (val / ref)
        else:
            flat[key] = val
    return grouped.with_values(flat)


# -- segmentation ---------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    start: int
    stop: int
    kind: str  # CC | CV | REST
    rate: float | None
    block: int

    def __len__(self):
        return self.stop - self.start


def infer_flags(data: DataSet, i_1c: float) -> np.ndarray:
    """Flags from the current alone: zero is rest, piecewise constant is CC."""
    I = data.I
    tol = 1e-9 * i_1c
    zero = np.abs(I) <= tol
    same_prev = np.r_[False, np.abs(np.diff(I)) <= tol]
    same_next = np.r_[np.abs(np.diff(I)) <= tol, False]
    flags = np.where(zero, "REST", np.where(same_prev | same_next, "CC", "CV")).astype(object)
    return flags


def _flags(data: DataSet, i_1c: float) -> np.ndarray:
    return data.flag if data.flag is not None else infer_flags(data, i_1c)


def split_segments(data: DataSet, i_1c: float) -> list[Segment]:
    if i_1c is None or not i_1c > 0:
        raise ConfigError("the 1C current must be known to segment data")
    flags = _flags(data, i_1c)
    blocks = data.block if data.block is not None else np.zeros(len(data), dtype=int)
    tol = 1e-9 * i_1c
    brk = (flags[1:] != flags[:-1]) | (blocks[1:] != blocks[:-1])
    brk |= (flags[1:] == "CC") & (np.abs(np.diff(data.I)) > tol)
    edges = np.concatenate([[0], np.flatnonzero(brk) + 1, [len(data)]])
    segs = []
    for a, b in zip(edges[:-1], edges[1:]):
        kind = flags[a]
        rate = float(np.median(np.abs(data.I[a:b]))) / i_1c if kind == "CC" else None
        segs.append(Segment(int(a), int(b), kind, rate, int(blocks[a])))
    # CV and rest segments inherit the rate of the neighbouring CC step in the block.
    out = []
    for k, s in enumerate(segs):
        rate = s.rate
        if rate is None:
            for j in list(range(k - 1, -1, -1)) + list(range(k + 1, len(segs))):
                if segs[j].block == s.block and segs[j].kind == "CC":
                    rate = segs[j].rate
                    break
        out.append(replace(s, rate=rate))
    return out


def segment(data: DataSet, rates) -> list[tuple[Segment, Scenario]]:
    """Label every segment with its scenario.

    ``rates`` is the 1C current in A or a mapping with key ``"1C"``.
    """
    i_1c = rates.get("1C") if isinstance(rates, dict) else rates
    if i_1c is None:
        raise ConfigError("the 1C current must be known to segment data")
    out = []
    for s in split_segments(data, float(i_1c)):
        if s.rate is None:
            raise ConfigError(f"block {s.block} has no CC step to label samples {s.start}:{s.stop}")
        out.append((s, scenario_for_rate(s.rate)))
    return out


# -- model construction and replay ----------------------------------------------

@dataclass(frozen=True)
class ModelSetup:
    """Everything besides the grouped parameters needed to simulate data."""

    ocp_neg: OcpCurve
    ocp_pos: OcpCurve
    soc: tuple[float, float]
    i_1c: float
    v_min: float
    v_max: float
    grid: P2dGrid = field(default_factory=P2dGrid)
    gains: PidGains | None = None

    def build(self, kind: str, grouped: GroupedParameterSet):
        if kind == "SPM_eq":
            return SpmEqModel(grouped, self.ocp_neg, self.ocp_pos)
        if kind == "SPM":
            return SpmModel(grouped, self.ocp_neg, self.ocp_pos, n_r=self.grid.n_r)
        if kind in ("P2D", "P2DT"):
            return P2dModel(grouped, self.ocp_neg, self.ocp_pos, self.grid, thermal=kind == "P2DT")
        raise ConfigError(f"unknown model kind {kind!r}")

    @property
    def pid(self) -> PidGains:
        return self.gains or PidGains.default(self.i_1c, 3.0 * self.i_1c)


def replay_block(model, data: DataSet, start: int, stop: int, setup: ModelSetup, flags=None):
    """Simulate samples ``start..stop-1`` from a rested state at ``setup.soc``.

    Returns the model voltages and the number of samples simulated before a
    limit was hit.
    """
    flags = _flags(data, setup.i_1c) if flags is None else flags
    v = np.full(stop - start, np.nan)
    state = model.initial_state(setup.soc)
    pid = model.kind != "SPM_eq"
    gains = setup.pid
    try:
        v_prev = float(model.voltage(state, data.I[start], data.T[start]))
    except CutoffEvent:
        return v, 0
    v[0] = v_prev
    I_prev = data.I[start]
    batch = hasattr(model, "run_currents")
    k = start + 1
    try:
        while k < stop:
            # The next run of samples that are all CV, or all not CV.
            cv = pid and flags[k] == "CV"
            e = k
            if pid:
                while e < stop and (flags[e] == "CV") == cv:
                    e += 1
            else:
                e = stop
            if cv and hasattr(model, "run_cv"):
                v_ref = setup.v_max if data.I[k] < 0 else setup.v_min
                pid_loop = _PidLoop(gains, v_ref, bumpless_state(gains, v_prev, v_ref, I_prev), v_prev)
                vs, Is, n_ok, state = model.run_cv(state, np.diff(data.t[k - 1: e]), data.T[k:e], pid_loop)
                v[k - start: k - start + n_ok] = vs[:n_ok]
                if n_ok < e - k:
                    return v, k - start + n_ok
                v_prev, I_prev = float(vs[-1]), float(Is[-1])
            elif cv:
                v_ref = setup.v_max if data.I[k] < 0 else setup.v_min
                ctrl = bumpless_state(gains, v_prev, v_ref, I_prev)
                for m in range(k, e):
                    dt = data.t[m] - data.t[m - 1]
                    u, ctrl = pid_current(gains, v_prev, v_ref, ctrl, dt)
                    I_prev = -u
                    state = model.step(state, I_prev, dt, data.T[m])
                    v_prev = float(model.voltage(state, I_prev, data.T[m]))
                    v[m - start] = v_prev
            elif batch:
                dts = np.diff(data.t[k - 1: e])
                run = model.run_currents(state, data.I[k:e], dts, data.T[k:e])
                v[k - start: k - start + run.n_valid] = run.voltage[: run.n_valid]
                if not run.complete:
                    return v, k - start + run.n_valid
                state = run.state()
                v_prev, I_prev = float(run.voltage[-1]), data.I[e - 1]
            else:
                for m in range(k, e):
                    dt = data.t[m] - data.t[m - 1]
                    state = model.step(state, data.I[m], dt, data.T[m])
                    v_prev = float(model.voltage(state, data.I[m], data.T[m]))
                    v[m - start] = v_prev
                I_prev = data.I[e - 1]
            k = e
    except (CutoffEvent, NumericalError) as exc:
        n_ok = int(np.flatnonzero(np.isnan(v))[0]) if np.isnan(v).any() else v.size
        log.debug("replay stopped at sample %d: %s", start + n_ok, exc)
        return v, n_ok
    return v, v.size


class _PidLoop:
    """Controller callback for closed-loop model runs."""

    def __init__(self, gains, v_ref, ctrl, v0):
        self.gains, self.v_ref, self.ctrl, self.v_last = gains, v_ref, ctrl, v0

    def __call__(self, v_prev, dt):
        if v_prev is not None:
            self.v_last = v_prev
        u, self.ctrl = pid_current(self.gains, self.v_last, self.v_ref, self.ctrl, dt)
        return -u


def simulate_segments(kind: str, grouped: GroupedParameterSet, data: DataSet, segments, setup: ModelSetup):
    """Model voltage on the samples of ``segments`` (NaN where not simulated).

    Each touched block is replayed from its start to its last selected sample.
    Returns ``(v, ok)`` where ``ok`` is False when a limit was hit.
    """
    model = setup.build(kind, grouped)
    flags = _flags(data, setup.i_1c)
    v = np.full(len(data), np.nan)
    ok = True
    ends = {}
    for s in segments:
        ends[s.block] = max(ends.get(s.block, 0), s.stop)
    for start, stop in data.block_ranges():
        block = int(data.block[start]) if data.block is not None else 0
        if block not in ends:
            continue
        stop = min(stop, ends[block])
        vb, n_ok = replay_block(model, data, start, stop, setup, flags)
        v[start:stop] = vb
        if n_ok < stop - start:
            ok = False
    return v, ok


def segment_mask(data: DataSet, segments, weights: str = "uniform"):
    """Sample weights: 1 inside the segments, or ``1/len`` per segment."""
    w = np.zeros(len(data))
    for s in segments:
        w[s.start: s.stop] = 1.0 if weights == "uniform" else 1.0 / len(s)
    if weights not in ("uniform", "segment"):
        raise ConfigError(f"unknown weighting {weights!r}")
    return w


def weighted_sse(v_model, v_exp, w) -> float:
    """``sum w (v_exp - v)^2``."""
    r = np.asarray(v_exp) - np.asarray(v_model)
    return float(np.sum(np.asarray(w) * r * r))


def rmse(v_model, v_exp) -> float:
    """Root-mean-square difference in mV over the common (finite) samples."""
    a, b = np.asarray(v_model, dtype=float), np.asarray(v_exp, dtype=float)
    if a.shape != b.shape:
        raise ValueError("traces must share time stamps")
    m = np.isfinite(a) & np.isfinite(b)
    if not m.any():
        raise ValueError("traces have no overlapping samples")
    return 1e3 * float(np.sqrt(np.mean((a[m] - b[m]) ** 2)))


# -- problems and optimization ---------------------------------------------------

@dataclass
class FitProblem:
    """A bounded least-squares problem ``min sum r(theta)^2``.

    ``residual`` maps parameter values (in ``keys`` order) to the weighted
    residual vector. Parameters are searched in log space unless
    ``log_space`` is False.
    """

    residual: object
    theta0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    keys: tuple[str, ...] = ()
    scenario: Scenario | None = None
    log_space: bool = True
    max_iter: int = 50
    gtol: float = 1e-10
    xtol: float = 1e-8
    ftol: float = 1e-8
    fd_step: float = 1e-6
    threads: int = 1
    n_samples: int = 0

    def __post_init__(self):
        self.theta0, self.lower, self.upper = (np.atleast_1d(np.asarray(a, dtype=float))
                                              for a in (self.theta0, self.lower, self.upper))
        if not (self.theta0.shape == self.lower.shape == self.upper.shape):
            raise ConfigError("theta0 and bounds differ in shape")
        if np.any(self.lower > self.theta0) or np.any(self.theta0 > self.upper):
            raise ConfigError("initial parameters outside bounds")
        if self.log_space and np.any(self.lower <= 0):
            raise ConfigError("log-space search needs positive bounds")
        if not self.keys:
            self.keys = tuple(f"p{k}" for k in range(self.theta0.size))


@dataclass
class FitResult:
    theta: dict
    objective: float
    rmse_mV: float
    iterations: int
    wall_time: float
    status: str
    history: list
    n_evaluations: int = 0
    penalized: int = 0

    def vector(self, keys) -> np.ndarray:
        return np.array([self.theta[k] for k in keys])


class _Budget(Exception):
    pass


def optimize(problem: FitProblem) -> FitResult:
    """Bounded trust-region least squares with forward-difference Jacobians.

    Deterministic for identical inputs. ``history`` holds the objective of
    every accepted improvement, so it is non-increasing.
    """
    t0 = time.perf_counter()
    log_space = problem.log_space

    def to_theta(x):
        return np.exp(x) if log_space else np.asarray(x, dtype=float)

    x0 = np.log(problem.theta0) if log_space else problem.theta0.copy()
    lb = np.log(problem.lower) if log_space else problem.lower
    ub = np.log(problem.upper) if log_space else problem.upper
    # A start on a bound makes the interior-point scaling take vanishing steps.
    margin = 1e-3 * (ub - lb)
    x0 = np.where(x0 <= lb, np.minimum(lb + margin, ub), np.where(x0 >= ub, np.maximum(ub - margin, lb), x0))
    best = {"cost": math.inf, "x": x0.copy(), "r": None}
    history: list[float] = []
    counters = {"nfev": 0, "njev": 0}
    cache: dict = {}

    def evaluate(x):
        r = np.asarray(problem.residual(to_theta(x)), dtype=float)
        if not np.all(np.isfinite(r)):
            r = np.full(max(r.size, 1), math.sqrt(PENALTY / max(r.size, 1)))
        return r

    def fun(x):
        counters["nfev"] += 1
        r = evaluate(x)
        cost = float(r @ r)
        cache["x"], cache["r"] = x.copy(), r
        if cost < best["cost"]:
            best.update(cost=cost, x=x.copy(), r=r)
            history.append(cost)
        return r

    def jac(x):
        counters["njev"] += 1
        if counters["njev"] > problem.max_iter:
            raise _Budget
        r0 = cache["r"] if "x" in cache and np.array_equal(cache["x"], x) else fun(x)
        steps = []
        for k in range(x.size):
            h = problem.fd_step * (1.0 if log_space else max(abs(x[k]), 1.0))
            if x[k] + h > ub[k]:
                h = -h
            steps.append(h)

        def column(k):
            xk = x.copy()
            xk[k] += steps[k]
            return (evaluate(xk) - r0) / steps[k]

        if problem.threads > 1:
            with ThreadPoolExecutor(problem.threads) as pool:
                cols = list(pool.map(column, range(x.size)))
        else:
            cols = [column(k) for k in range(x.size)]
        return np.column_stack(cols)

    status = "converged"
    try:
        res = least_squares(fun, x0, jac=jac, bounds=(lb, ub), method="trf", xtol=problem.xtol,
                            ftol=problem.ftol, gtol=problem.gtol, max_nfev=20 * problem.max_iter + 20)
        if res.status == 0:
            status = "max-iterations"
        elif res.status < 0:
            status = "failed"
    except _Budget:
        status = "max-iterations"
    x = best["x"]
    theta = to_theta(x)
    r = best["r"] if best["r"] is not None else evaluate(x)
    n = problem.n_samples or r.size
    cost = float(r @ r)
    return FitResult(
        theta=dict(zip(problem.keys, theta.tolist())),
        objective=cost,
        rmse_mV=1e3 * math.sqrt(cost / n) if n else float("nan"),
        iterations=min(counters["njev"], problem.max_iter),
        wall_time=time.perf_counter() - t0,
        status=status,
        history=history,
        n_evaluations=counters["nfev"],
        penalized=getattr(problem.residual, "penalized", 0),
    )


class SegmentResidual:
    """``theta -> sqrt(w) (v_exp - v(theta))`` over the selected segments."""

    def __init__(self, kind, base: GroupedParameterSet, keys, data: DataSet, segments,
                 setup: ModelSetup, weights: str = "uniform"):
        self.kind, self.base, self.keys = kind, base, tuple(keys)
        self.data, self.segments, self.setup = data, list(segments), setup
        w = segment_mask(data, self.segments, weights)
        self.idx = np.flatnonzero(w > 0)
        self.sqrt_w = np.sqrt(w[self.idx])
        self.penalized = 0

    def grouped(self, theta) -> GroupedParameterSet:
        return with_params(self.base, dict(zip(self.keys, np.atleast_1d(theta).tolist())))

    def simulate(self, theta):
        return simulate_segments(self.kind, self.grouped(theta), self.data, self.segments, self.setup)

    def __call__(self, theta):
        try:
            g = self.grouped(theta)
        except ValueError:
            self.penalized += 1
            return np.full(self.idx.size, math.sqrt(PENALTY / self.idx.size))
        v, ok = simulate_segments(self.kind, g, self.data, self.segments, self.setup)
        vm = v[self.idx]
        if not ok or not np.all(np.isfinite(vm)):
            self.penalized += 1
            return np.full(self.idx.size, math.sqrt(PENALTY / self.idx.size))
        return self.sqrt_w * (self.data.v[self.idx] - vm)


def objective(theta, problem: FitProblem) -> float:
    """Weighted sum of squared voltage errors (V^2)."""
    r = np.asarray(problem.residual(np.atleast_1d(np.asarray(theta, dtype=float))))
    return float(r @ r)


def make_problem(scenario: Scenario, data: DataSet, segments, base: GroupedParameterSet, setup: ModelSetup,
                 keys=None, theta0=None, model_kind=None, bounds_factor: float = 100.0,
                 weights: str = "uniform", **settings) -> FitProblem:
    keys = tuple(keys or scenario.params)
    theta0 = np.array([get_param(base, k) for k in keys]) if theta0 is None else np.asarray(theta0, dtype=float)
    res = SegmentResidual(model_kind or scenario.model, base, keys, data, segments, setup, weights)
    return FitProblem(res, theta0, theta0 / bounds_factor, theta0 * bounds_factor, keys, scenario,
                      n_samples=res.idx.size, **settings)


# -- pipeline ----------------------------------------------------------------------

@dataclass
class PipelineConfig:
    stages: tuple[str, ...] = STAGE_ORDER
    weights: str = "uniform"
    max_iter: int = 50
    bounds_factor: float = 100.0
    threads: int = 1
    refine: bool = False
    refine_cold: bool = False
    refine_scenarios: tuple[str, ...] = ("s",)
    refine_keys: tuple[str, ...] = SCENARIOS["s"].params
    xtol: float = 1e-8
    ftol: float = 1e-8


@dataclass
class StageReport:
    name: str
    model: str
    n_samples: int
    result: FitResult


@dataclass
class PipelineReport:
    stages: list = field(default_factory=list)
    assembled: GroupedParameterSet | None = None
    rmse_by_scenario: dict = field(default_factory=dict)
    rmse_total: float | None = None
    refinement: StageReport | None = None
    refinement_cold: StageReport | None = None
    failed: str | None = None
    message: str = ""

    def summary_rows(self):
        rows = [(s.name, s.model, s.result.rmse_mV, s.result.iterations, s.result.wall_time, s.result.status)
                for s in self.stages]
        for tag, r in (("refine", self.refinement), ("refine-cold", self.refinement_cold)):
            if r is not None:
                rows.append((tag, r.model, r.result.rmse_mV, r.result.iterations, r.result.wall_time, r.result.status))
        return rows

    def format(self) -> str:
        lines = [f"{'stage':<12}{'model':<8}{'rmse [mV]':>10}{'iter':>6}{'t_opt [s]':>11}  status"]
        for name, model, e, it, wt, st in self.summary_rows():
            lines.append(f"{name:<12}{model:<8}{e:>10.3f}{it:>6d}{wt:>11.2f}  {st}")
        if self.rmse_by_scenario:
            lines.append("assembled P2DT rmse [mV]: " + ", ".join(
                f"{k}={v:.3f}" for k, v in self.rmse_by_scenario.items()) + f", all={self.rmse_total:.3f}")
        if self.failed:
            lines.append(f"pipeline halted in stage {self.failed}: {self.message}")
        return "\n".join(lines)


def scenario_segments(labelled, name: str):
    return [s for s, sc in labelled if sc.name == name]


def run_stage(name, data, labelled, grouped, setup, config: PipelineConfig, keys=None, model_kind=None,
              scenarios=None) -> StageReport:
    scenario = SCENARIOS[name]
    segs = [s for n in (scenarios or (name,)) for s in scenario_segments(labelled, n)]
    if not segs:
        raise StageFailure(f"no data segments for scenario {name!r}")
    problem = make_problem(scenario, data, segs, grouped, setup, keys=keys, model_kind=model_kind,
                           bounds_factor=config.bounds_factor, weights=config.weights,
                           max_iter=config.max_iter, threads=config.threads, xtol=config.xtol, ftol=config.ftol)
    log.info("stage %s: %d params, %d samples, model %s", name, len(problem.keys), problem.n_samples,
             problem.residual.kind)
    result = optimize(problem)
    return StageReport(name, problem.residual.kind, problem.n_samples, result)


def staged_pipeline(data: DataSet, theta_nominal: GroupedParameterSet, setup: ModelSetup,
                    config: PipelineConfig | None = None) -> PipelineReport:
    """Fit the scenarios in order, freezing each stage's result for the next."""
    config = config or PipelineConfig()
    order = [s for s in STAGE_ORDER if s in config.stages]
    labelled = segment(data, setup.i_1c)
    report = PipelineReport()
    grouped = theta_nominal
    for name in order:
        try:
            stage = run_stage(name, data, labelled, grouped, setup, config)
        except (StageFailure, ConfigError, ValueError) as exc:
            report.failed, report.message = name, str(exc)
            report.assembled = grouped
            return report
        report.stages.append(stage)
        if stage.result.status == "failed":
            report.failed, report.message = name, "optimizer failed"
            report.assembled = grouped
            return report
        grouped = with_params(grouped, stage.result.theta)
        if name == "s" and config.refine:
            _refine(report, data, labelled, grouped, theta_nominal, setup, config)
    report.assembled = grouped
    assembled_rmse(report, data, labelled, setup)
    return report


def refinement_segments(data: DataSet, labelled, scenarios=("s",)):
    """Discharge CC segments at the lowest C-rate of ``scenarios``, with their scenario."""
    cand = [(s, sc) for s, sc in labelled if sc.name in scenarios and s.kind == "CC" and data.I[s.start] > 0]
    if not cand:
        return []
    low = min(s.rate for s, _ in cand)
    return [(s, sc) for s, sc in cand if math.isclose(s.rate, low, rel_tol=0.05)]


def _refine(report, data, labelled, grouped, theta_nominal, setup, config: PipelineConfig) -> None:
    # P2D fit of the SPM-stage keys on the low-current discharge, warm-started at the SPM optimum;
    # the result is reported only and does not feed the later stages.
    segs = refinement_segments(data, labelled, config.refine_scenarios)
    report.refinement = run_stage("s", data, segs, grouped, setup, config, keys=config.refine_keys,
                                  model_kind="P2D")
    report.refinement.name = "refine"
    if config.refine_cold:
        cold = with_params(grouped, {k: get_param(theta_nominal, k) for k in config.refine_keys})
        report.refinement_cold = run_stage("s", data, segs, cold, setup, config, keys=config.refine_keys,
                                           model_kind="P2D")
        report.refinement_cold.name = "refine-cold"


def assembled_rmse(report: PipelineReport, data: DataSet, labelled, setup: ModelSetup) -> None:
    segs = [s for s, _ in labelled]
    v, _ = simulate_segments("P2DT", report.assembled, data, segs, setup)
    for name in STAGE_ORDER:
        idx = np.concatenate([np.arange(s.start, s.stop) for s in scenario_segments(labelled, name)] or [[]]).astype(int)
        if idx.size:
            report.rmse_by_scenario[name] = rmse(v[idx], data.v[idx])
    report.rmse_total = rmse(v, data.v)
