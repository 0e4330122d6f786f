"""Command-line entry point: ``p2dident {simulate,identify,identifiability,synth}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigFileError, RunConfig
from .data import DataError, DataSet, read_csv, write_csv
from .fit import (SCENARIOS, ConfigError, ModelSetup, PipelineConfig, StageFailure, get_param,
                  staged_pipeline, with_params)
from .ocp import OcpError
from .p2d import NumericalError, P2dModel
from .params import ParameterError
from .protocol import HeatingLag, ProtocolError, TemperatureSignal, cccv_block, run_protocol

log = logging.getLogger("p2dident")

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE, EXIT_NUMERICAL = 0, 2, 3, 4
INPUT_ERRORS = (ConfigFileError, DataError, ParameterError, OcpError, ProtocolError, ConfigError)


class PipelineFailure(RuntimeError):
    pass


def _sign(cfg: RunConfig) -> float:
    """Factor between the file convention and the internal discharge-positive one."""
    return 1.0 if cfg.current_sign == "discharge" else -1.0


def _setup(cfg: RunConfig, pf) -> ModelSetup:
    i_1c = cfg.i_1c if cfg.i_1c is not None else pf.grouped.i_ref
    return ModelSetup(pf.ocp_neg, pf.ocp_pos, tuple(cfg.soc), i_1c, cfg.v_min, cfg.v_max, cfg.grid)


def _temperature(cfg: RunConfig, grouped, i_1c):
    if cfg.temperature_file is not None:
        if not cfg.temperature_file.is_file():
            raise ConfigFileError(f"temperature file not found: {cfg.temperature_file}")
        tab = np.loadtxt(cfg.temperature_file, delimiter=",", comments="#", skiprows=1, ndmin=2)
        return TemperatureSignal(tab[:, 0], tab[:, 1])
    T_amb = cfg.T_amb if cfg.T_amb is not None else grouped.T_ref
    if cfg.heating_gain > 0:
        return HeatingLag(T_amb, i_1c, cfg.heating_gain, cfg.heating_tau)
    return TemperatureSignal(T_const=T_amb)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in r])


def _load_data(cfg: RunConfig) -> DataSet:
    if cfg.data is None:
        raise ConfigFileError("no data file configured ([run] data)")
    d = read_csv(cfg.data)
    if _sign(cfg) < 0:
        d = DataSet(d.t, -d.I, d.v, d.T, d.flag, d.block, d.meta)
    return d


# -- commands -------------------------------------------------------------------

def _program(cfg: RunConfig, i_1c: float):
    s = _sign(cfg)
    if cfg.steps is not None:
        return [st if st.kind != "CC" else type(st)(st.kind, s * st.value, st.duration, st.v_cutoff,
                                                     st.i_cutoff, st.label) for st in cfg.steps]
    if "rates" in cfg.options:
        steps = []
        for label, rate in cfg.rates:
            steps += cccv_block(rate, i_1c, cfg.v_min, cfg.v_max, label)
        return steps
    return cccv_block(1.0, i_1c, cfg.v_min, cfg.v_max, "1C")


def cmd_simulate(cfg: RunConfig) -> int:
    """Run the configured protocol; write the trace and one CSV per plot panel."""
    pf = cfg.load_parameters()
    setup = _setup(cfg, pf)
    model = setup.build(cfg.model, pf.grouped)
    steps = _program(cfg, setup.i_1c)
    T_sig = _temperature(cfg, pf.grouped, setup.i_1c)
    T0 = T_sig.T_const if not isinstance(T_sig, TemperatureSignal) or T_sig.times is None else T_sig(0.0)
    state = model.initial_state(setup.soc, T=T0) if cfg.model.startswith("P2D") else model.initial_state(setup.soc)
    i_max = max((abs(st.value) for st in steps if st.kind == "CC"), default=0.0)
    tr = run_protocol(model, steps, state=state, T_signal=T_sig, gains=cfgmod.pid_gains(cfg, setup.i_1c, i_max),
                      i_1c=setup.i_1c)
    flag = np.where(tr.flag == "CUTOFF", "CC", tr.flag).astype(object)
    cfg.out.mkdir(parents=True, exist_ok=True)
    s = _sign(cfg)
    write_csv(DataSet(tr.t, s * tr.I, tr.v, tr.T, flag), cfg.out / "trace.csv",
              [f"model={cfg.model}", f"current_sign={cfg.current_sign}"])
    for name, col, y in (("current", "current_A", s * tr.I), ("voltage", "voltage_V", tr.v),
                         ("temperature", "temperature_K", tr.T)):
        _write_rows(cfg.out / f"plot_{name}.csv", ("time_h", col), zip((tr.t / 3600.0).tolist(), y.tolist()))
    for ev in tr.events:
        log.warning("%s", ev)
    print(f"{len(tr)} samples, {len(tr.events)} cutoff events -> {cfg.out / 'trace.csv'}")
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    """Synthetic six-rate data set from the P2DT model at the configured parameters."""
    from .synth import SynthConfig, generate

    pf = cfg.load_parameters()
    setup = _setup(cfg, pf)
    sc = SynthConfig(rates=cfg.rates, noise_sd=cfg.noise_sd, seed=cfg.seed, heating_gain=cfg.heating_gain,
                     heating_tau=cfg.heating_tau, T_amb=cfg.T_amb)
    grouped = pf.grouped
    d = generate(grouped, setup, sc, model_kind=cfg.model)
    cfg.out.mkdir(parents=True, exist_ok=True)
    s = _sign(cfg)
    path = cfg.out / "data.csv"
    write_csv(DataSet(d.t, s * d.I, d.v, d.T, d.flag, d.block), path,
              [f"seed={cfg.seed}", f"noise_sd={cfg.noise_sd}", f"model={cfg.model}",
               f"current_sign={cfg.current_sign}", "rates=" + ",".join(lbl for lbl, _ in cfg.rates)])
    cfgmod.write_parameters(cfg.out / "theta_true.ini", grouped, (pf.ocp_neg, pf.ocp_pos))
    print(f"{len(d)} samples -> {path}")
    return EXIT_OK


def perturbed_start(grouped, stages, factor: float):
    """Alternate ``1 + factor`` and ``1 - factor`` over the fitted keys in stage order."""
    keys = [k for s in ("eq", "s", "e", "T") if s in stages for k in SCENARIOS[s].params]
    return with_params(grouped, {k: get_param(grouped, k) * (1 + factor if i % 2 == 0 else 1 - factor)
                                 for i, k in enumerate(keys)})


def cmd_identify(cfg: RunConfig) -> int:
    """Staged identification; writes the report, the fitted set and a key-value table."""
    pf = cfg.load_parameters()
    setup = _setup(cfg, pf)
    data = _load_data(cfg)
    start = pf.grouped
    if cfg.start == "perturbed":
        start = perturbed_start(start, cfg.stages, cfg.perturbation)
    elif cfg.start != "nominal":
        raise ConfigFileError(f"[identify] start must be 'nominal' or 'perturbed', got {cfg.start!r}")
    pc = PipelineConfig(stages=tuple(cfg.stages), weights=cfg.weights, max_iter=cfg.max_iter,
                        bounds_factor=cfg.bounds_factor, threads=cfg.threads, refine=cfg.refine,
                        refine_cold=cfg.refine_cold)
    report = staged_pipeline(data, start, setup, pc)
    cfg.out.mkdir(parents=True, exist_ok=True)
    text = report.format()
    (cfg.out / "report.txt").write_text(text + "\n")
    print(text)
    rows = []
    for st in report.stages:
        r = st.result
        rows.append((st.name, st.model, float(r.rmse_mV), r.iterations, float(r.wall_time), r.status))
    _write_rows(cfg.out / "stages.csv", ("stage", "model", "rmse_mV", "iterations", "wall_time_s", "status"), rows)
    theta = [(f"{st.name}", k, float(v)) for st in report.stages for k, v in st.result.theta.items()]
    if report.rmse_total is not None:
        theta.append(("assembled", "rmse_mV", float(report.rmse_total)))
    _write_rows(cfg.out / "theta.csv", ("stage", "key", "value"), theta)
    if report.assembled is not None:
        cfgmod.write_parameters(cfg.out / "fitted.ini", report.assembled, (pf.ocp_neg, pf.ocp_pos))
    if report.failed:
        raise PipelineFailure(f"stage {report.failed} failed: {report.message}")
    return EXIT_OK


def cmd_identifiability(cfg: RunConfig) -> int:
    """Exponent matrices, scaling families and a numerical equivalence run."""
    from fractions import Fraction

    from .defaults import nominal_physical
    from .identifiability import (identifiability_class, identifiability_matrix, nullspace_scalings,
                                  solid_matrix)
    from .params import ScalingTransform, apply_scaling, group

    pf = cfg.load_parameters()
    phys = pf.physical if pf.physical is not None else nominal_physical()
    b = Fraction(cfg.b).limit_denominator(1000)
    lines = []
    for title, m in ((f"electrolyte system (b = {b})", identifiability_matrix(b)), ("solid system", solid_matrix())):
        fam = nullspace_scalings(m)
        lines += [title, m.format(), f"rank = {m.rank()} of {m.shape[1]} columns",
                  f"scaling families: {len(fam)}"]
        for d in fam:
            lines.append("  " + ", ".join(f"{c}^{v}" for c, v in d.exponents().items() if v != 0))
        lines.append(identifiability_class(m))
        lines.append("")
    tr = ScalingTransform(*cfg.mu)
    a, s = group(phys), group(apply_scaling(phys, tr))
    fa, fs = a.flat(), s.flat()
    rel = max(abs(fs[k] - fa[k]) / max(abs(fa[k]), 1e-300) for k in fa)
    setup = _setup(cfg, pf)

    volts = []
    for g in (a, s):
        m = P2dModel(g, pf.ocp_neg, pf.ocp_pos, cfg.grid)
        st = m.initial_state(setup.soc)
        v = []
        for _ in range(10):
            st = m.step(st, setup.i_1c, 1.0)
            v.append(m.voltage(st, setup.i_1c))
        volts.append(np.array(v))
    dv = float(np.max(np.abs(volts[0] - volts[1])))
    lines += [f"scaling mu={tr.mu:g}, mu1={tr.mu1:g}, mu2={tr.mu2:g}",
              f"max relative change of grouped parameters: {rel:.3e}",
              f"max |dv| over a 10-step 1C P2D trace: {dv:.3e} V"]
    text = "\n".join(lines)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "identifiability.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "identify": cmd_identify, "identifiability": cmd_identifiability,
            "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (INI)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="worker threads for finite differences")
    common.add_argument("--verbose", "-v", action="store_true")
    p = argparse.ArgumentParser(prog="p2dident", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__.splitlines()[0])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = cfgmod.read_run_config(args.config)
        if args.out is not None:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigFileError("--threads must be at least 1")
            cfg.threads = args.threads
        if cfg.parameters is not None and not cfg.parameters.is_file():
            raise ConfigFileError(f"parameter file not found: {cfg.parameters}")
        return COMMANDS[args.command](cfg)
    except INPUT_ERRORS as exc:
        print(f"p2dident: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PipelineFailure, StageFailure) as exc:
        print(f"p2dident: pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (NumericalError, FloatingPointError) as exc:
        print(f"p2dident: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
