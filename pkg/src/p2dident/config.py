"""INI configuration files for parameters, protocols and command settings.

Parameter files hold one section per region (``[neg]``, ``[sep]``, ``[pos]``)
plus ``[cell]`` for the cell-level entries; ``[meta] kind`` says whether the
keys are grouped (default) or physical. OCP curves live in ``[ocp]`` either as
analytic terms (``neg = const:0.1; exp:0.8,-30,0``) or as a table path
(``neg_table = graphite.csv``). Relative paths resolve against the directory
of the file that names them.

Run files carry the command settings; see the README for every section.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .defaults import SOC_FULL, V_MAX, V_MIN, nominal_grouped, nominal_ocps, nominal_physical
from .ocp import OcpCurve, OcpError, format_terms, load_table, parse_terms
from .p2d import P2dGrid
from .params import (GroupedParameterSet, ParameterError, PhysicalParameterSet, group,
                     physical_from_dict, physical_to_dict)
from .protocol import DEFAULT_RATES, PidGains, ProtocolError, ProtocolStep

CURRENT_SIGNS = ("discharge", "charge")


class ConfigFileError(ValueError):
    """Missing or malformed configuration file."""


def _read_ini(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"configuration file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str  # keys are case sensitive (E_tau_s, K_p, ...)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigFileError(f"{path}: {exc}") from None
    return cp


def _float(section, key, default=None):
    if key not in section:
        if default is None:
            raise ConfigFileError(f"[{section.name}] missing key {key!r}")
        return default
    try:
        return float(section[key])
    except ValueError:
        raise ConfigFileError(f"[{section.name}] {key} = {section[key]!r} is not a number") from None


# -- parameter files ------------------------------------------------------------

@dataclass(frozen=True)
class ParameterFile:
    grouped: GroupedParameterSet
    ocp_neg: OcpCurve
    ocp_pos: OcpCurve
    physical: PhysicalParameterSet | None = None


def _numeric_sections(cp, names):
    out = {}
    for name in names:
        if not cp.has_section(name):
            continue
        sec = cp[name]
        out[name] = {k: _float(sec, k) for k in sec}
    return out


def _ocps(cp, base: Path) -> tuple[OcpCurve, OcpCurve]:
    default = dict(zip(("neg", "pos"), nominal_ocps()))
    if not cp.has_section("ocp"):
        return default["neg"], default["pos"]
    sec = cp["ocp"]
    out = {}
    for e in ("neg", "pos"):
        if e in sec and f"{e}_table" in sec:
            raise ConfigFileError(f"[ocp] give either {e} or {e}_table")
        try:
            if f"{e}_table" in sec:
                p = base / sec[f"{e}_table"]
                if not p.is_file():
                    raise ConfigFileError(f"OCP table not found: {p}")
                out[e] = load_table(e, p)
            elif e in sec:
                out[e] = parse_terms(e, sec[e])
            else:
                out[e] = default[e]
        except OcpError as exc:
            raise ConfigFileError(f"[ocp] {e}: {exc}") from None
    return out["neg"], out["pos"]


def read_parameters(path) -> ParameterFile:
    """Load a grouped or physical parameter file with its OCP curves."""
    path = Path(path)
    cp = _read_ini(path)
    kind = cp.get("meta", "kind", fallback="grouped").strip()
    secs = _numeric_sections(cp, ("neg", "sep", "pos", "cell"))
    try:
        if kind == "physical":
            phys = physical_from_dict(secs)
            grouped, physical = group(phys), phys
        elif kind == "grouped":
            flat = {f"{r}.{k}": v for r in ("neg", "sep", "pos") for k, v in secs.get(r, {}).items()}
            flat.update(secs.get("cell", {}))
            known = set(nominal_grouped().flat())
            unknown = sorted(set(flat) - known)
            if unknown:
                raise ConfigFileError(f"{path}: unknown parameter {unknown[0]!r}")
            missing = sorted(known - set(flat) - {"T_ref", "i_ref"})
            if missing:
                raise ConfigFileError(f"{path}: missing parameter {missing[0]!r}")
            grouped, physical = GroupedParameterSet.from_flat(flat), None
        else:
            raise ConfigFileError(f"{path}: [meta] kind must be 'grouped' or 'physical', got {kind!r}")
    except (ParameterError, TypeError, KeyError) as exc:
        raise ConfigFileError(f"{path}: {exc}") from None
    ocp_neg, ocp_pos = _ocps(cp, path.parent)
    return ParameterFile(grouped, ocp_neg, ocp_pos, physical)


def write_parameters(path, grouped: GroupedParameterSet | None = None, ocps=None,
                     physical: PhysicalParameterSet | None = None) -> None:
    """Write a parameter file; values use ``repr`` so they read back exactly."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if physical is not None:
        cp["meta"] = {"kind": "physical"}
        for name, sec in physical_to_dict(physical).items():
            cp[name] = {k: repr(float(v)) for k, v in sec.items()}
    else:
        cp["meta"] = {"kind": "grouped"}
        flat = grouped.flat()
        for r in ("neg", "sep", "pos"):
            cp[r] = {k.split(".", 1)[1]: repr(v) for k, v in flat.items() if k.startswith(r + ".")}
        cp["cell"] = {k: repr(v) for k, v in flat.items() if "." not in k}
    if ocps is not None:
        sec = {}
        for e, curve in zip(("neg", "pos"), ocps):
            if curve.terms:
                sec[e] = format_terms(curve)
        if sec:
            cp["ocp"] = sec
    with open(path, "w") as fh:
        cp.write(fh)


# -- run files --------------------------------------------------------------------

def parse_step(text: str) -> ProtocolStep:
    """``KIND [value] [key=value ...]``, e.g. ``CC 3.0 v_cutoff=3.65``."""
    tokens = text.split()
    if not tokens:
        raise ConfigFileError("empty protocol step")
    kind = {"cc": "CC", "cv": "CV", "rest": "Rest"}.get(tokens[0].lower())
    if kind is None:
        raise ConfigFileError(f"unknown step kind {tokens[0]!r}")
    kw: dict = {}
    rest = tokens[1:]
    if rest and "=" not in rest[0]:
        kw["value"] = rest.pop(0)
    for tok in rest:
        if "=" not in tok:
            raise ConfigFileError(f"malformed step option {tok!r} in {text!r}")
        k, v = tok.split("=", 1)
        if k not in ("duration", "v_cutoff", "i_cutoff", "label", "value"):
            raise ConfigFileError(f"unknown step option {k!r} in {text!r}")
        kw[k] = v
    try:
        for k in ("value", "duration", "v_cutoff", "i_cutoff"):
            if k in kw:
                kw[k] = float(kw[k])
        return ProtocolStep(kind, **kw)
    except ValueError as exc:
        raise ConfigFileError(f"step {text!r}: {exc}") from None


def parse_rates(text: str) -> tuple:
    """``C/20, C/2, 1C, 3C`` or ``label:rate`` items."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            label, val = item.split(":", 1)
            rate = float(val)
        else:
            label = item
            s = item.upper()
            try:
                if s.startswith("C/"):
                    rate = 1.0 / float(s[2:])
                elif s.endswith("C"):
                    rate = float(s[:-1])
                else:
                    raise ValueError
            except ValueError:
                raise ConfigFileError(f"cannot read C-rate {item!r}") from None
        if not rate > 0:
            raise ConfigFileError(f"C-rate must be positive: {item!r}")
        out.append((label.strip(), rate))
    if not out:
        raise ConfigFileError("empty rate list")
    return tuple(out)


@dataclass
class RunConfig:
    """Everything a CLI command needs besides the command name."""

    base: Path = field(default_factory=Path.cwd)
    parameters: Path | None = None
    data: Path | None = None
    out: Path = Path("out")
    seed: int = 20240611
    threads: int = 1
    current_sign: str = "discharge"
    soc: tuple = SOC_FULL
    v_min: float = V_MIN
    v_max: float = V_MAX
    i_1c: float | None = None
    model: str = "P2DT"
    grid: P2dGrid = field(default_factory=P2dGrid)
    gains: PidGains | None = None
    steps: list | None = None
    rates: tuple = DEFAULT_RATES
    T_amb: float | None = None
    heating_gain: float = 1.0
    heating_tau: float = 600.0
    temperature_file: Path | None = None
    noise_sd: float = 1e-3
    stages: tuple = ("eq", "s", "e", "T")
    weights: str = "uniform"
    max_iter: int = 50
    bounds_factor: float = 100.0
    start: str = "nominal"
    perturbation: float = 0.2
    refine: bool = False
    refine_cold: bool = False
    b: float = 1.5
    mu: tuple = (3.0, 1.0, 1.0)
    options: dict = field(default_factory=dict)

    def load_parameters(self) -> ParameterFile:
        if self.parameters is None:
            on, op = nominal_ocps()
            phys = nominal_physical()
            return ParameterFile(group(phys), on, op, phys)
        return read_parameters(self.parameters)

    def resolved(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p


def read_run_config(path=None) -> RunConfig:
    """Parse a run file; ``None`` gives the built-in defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    cp = _read_ini(path)
    cfg.base = path.parent.resolve()
    known = {"run", "cell", "model", "pid", "protocol", "temperature", "synth", "identify", "identifiability"}
    unknown = sorted(set(cp.sections()) - known)
    if unknown:
        raise ConfigFileError(f"{path}: unknown section [{unknown[0]}]")
    try:
        if cp.has_section("run"):
            s = cp["run"]
            if "parameters" in s:
                cfg.parameters = cfg.resolved(s["parameters"])
            if "data" in s:
                cfg.data = cfg.resolved(s["data"])
            if "out" in s:
                cfg.out = cfg.resolved(s["out"])
            cfg.seed = s.getint("seed", cfg.seed)
            cfg.threads = s.getint("threads", cfg.threads)
            cfg.current_sign = s.get("current_sign", cfg.current_sign).strip()
            if cfg.current_sign not in CURRENT_SIGNS:
                raise ConfigFileError(f"[run] current_sign must be one of {CURRENT_SIGNS}")
        if cp.has_section("cell"):
            s = cp["cell"]
            cfg.soc = (_float(s, "soc_neg", cfg.soc[0]), _float(s, "soc_pos", cfg.soc[1]))
            cfg.v_min = _float(s, "v_min", cfg.v_min)
            cfg.v_max = _float(s, "v_max", cfg.v_max)
            if "i_1c" in s:
                cfg.i_1c = _float(s, "i_1c")
        if cp.has_section("model"):
            s = cp["model"]
            cfg.model = s.get("kind", cfg.model).strip()
            g = cfg.grid
            cfg.grid = P2dGrid(s.getint("n_neg", g.n_neg), s.getint("n_sep", g.n_sep),
                               s.getint("n_pos", g.n_pos), s.getint("n_r", g.n_r))
        if cp.has_section("pid"):
            s = cp["pid"]
            cfg.options["pid"] = {k: _float(s, k) for k in s if k in ("K_p", "K_i", "K_d", "windup")}
        if cp.has_section("protocol"):
            s = cp["protocol"]
            if "steps" in s:
                cfg.steps = [parse_step(line) for line in s["steps"].splitlines() if line.strip()]
            if "rates" in s:
                cfg.rates = parse_rates(s["rates"])
                cfg.options["rates"] = True
        if cp.has_section("temperature"):
            s = cp["temperature"]
            if "T_amb" in s:
                cfg.T_amb = _float(s, "T_amb")
            cfg.heating_gain = _float(s, "heating_gain", cfg.heating_gain)
            cfg.heating_tau = _float(s, "heating_tau", cfg.heating_tau)
            if "file" in s:
                cfg.temperature_file = cfg.resolved(s["file"])
        if cp.has_section("synth"):
            s = cp["synth"]
            cfg.noise_sd = _float(s, "noise_sd", cfg.noise_sd)
            cfg.seed = s.getint("seed", cfg.seed)
        if cp.has_section("identify"):
            s = cp["identify"]
            if "stages" in s:
                cfg.stages = tuple(x.strip() for x in s["stages"].split(",") if x.strip())
            cfg.weights = s.get("weights", cfg.weights).strip()
            cfg.max_iter = s.getint("max_iter", cfg.max_iter)
            cfg.bounds_factor = _float(s, "bounds_factor", cfg.bounds_factor)
            cfg.start = s.get("start", cfg.start).strip()
            cfg.perturbation = _float(s, "perturbation", cfg.perturbation)
            cfg.refine = s.getboolean("refine", cfg.refine)
            cfg.refine_cold = s.getboolean("refine_cold", cfg.refine_cold)
        if cp.has_section("identifiability"):
            s = cp["identifiability"]
            cfg.b = _float(s, "b", cfg.b)
            cfg.mu = (_float(s, "mu", cfg.mu[0]), _float(s, "mu1", cfg.mu[1]), _float(s, "mu2", cfg.mu[2]))
    except (ValueError, ProtocolError) as exc:
        if isinstance(exc, ConfigFileError):
            raise
        raise ConfigFileError(f"{path}: {exc}") from None
    if not (math.isfinite(cfg.v_min) and cfg.v_min < cfg.v_max):
        raise ConfigFileError(f"{path}: v_min must be below v_max")
    return cfg


def pid_gains(cfg: RunConfig, i_1c: float, i_max: float) -> PidGains:
    """Defaults scaled by the 1C current, overridden by ``[pid]`` entries."""
    base = PidGains.default(i_1c, i_max)
    over = cfg.options.get("pid", {})
    return dataclasses.replace(base, **over) if over else base
