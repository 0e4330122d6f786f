"""Physical and grouped parameter sets and the map between them.

The normalized P2D model only sees a :class:`GroupedParameterSet`. The
physical set exists so that scaling families which leave the grouped set
unchanged can be constructed and checked.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields, replace

from .constants import FARADAY, GAS_CONSTANT


class ParameterError(ValueError):
    """A parameter set violates one of its invariants."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ElectrodeProperties:
    D_s: float
    R_s: float
    eps_s: float
    eps_e: float
    L: float
    k_n: float
    c_s_max: float
    sigma_s: float
    E_Ds: float = 0.0
    E_kn: float = 0.0


@dataclass(frozen=True)
class SeparatorProperties:
    eps_e: float
    L: float


@dataclass(frozen=True)
class PhysicalParameterSet:
    """As-made cell parameters (SI units)."""

    neg: ElectrodeProperties
    sep: SeparatorProperties
    pos: ElectrodeProperties
    A: float
    D_e: float
    kappa_e: float
    t_plus: float
    f_activity_term: float
    R_f: float
    c_e_ref: float
    i_ref: float  # reference current (A), the 1C current of the cell
    b: float = 1.5
    alpha: float = 0.5
    T_ref: float = 298.15

    def __post_init__(self):
        validate_physical(self)

    def region(self, name: str):
        return getattr(self, name)


def validate_physical(p: PhysicalParameterSet) -> None:
    for name in ("neg", "pos"):
        e = p.region(name)
        for f in ("D_s", "R_s", "eps_s", "eps_e", "L", "k_n", "c_s_max", "sigma_s"):
            _positive(f"{name}.{f}", getattr(e, f))
        for f in ("E_Ds", "E_kn"):
            if not math.isfinite(getattr(e, f)):
                raise ParameterError(f"{name}.{f}", "must be finite")
        if e.eps_s + e.eps_e > 1.0 + 1e-12:
            raise ParameterError(f"{name}.eps_s", "eps_s + eps_e exceeds 1 (negative filler fraction)")
    _positive("sep.eps_e", p.sep.eps_e)
    _positive("sep.L", p.sep.L)
    if p.sep.eps_e > 1.0 + 1e-12:
        raise ParameterError("sep.eps_e", "volume fraction exceeds 1")
    for f in ("A", "D_e", "kappa_e", "f_activity_term", "R_f", "c_e_ref", "i_ref", "b", "alpha", "T_ref"):
        _positive(f, getattr(p, f))
    if not 0.0 < p.t_plus < 1.0:
        raise ParameterError("t_plus", f"must lie in (0, 1), got {p.t_plus}")


def _positive(field: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0.0):
        raise ParameterError(field, f"must be positive and finite, got {value}")


@dataclass(frozen=True)
class ElectrodeGroups:
    tau_d_s: float
    tau_c_s: float
    tau_k: float
    tau_d_e: float
    nu_e: float
    kappa: float
    sigma: float
    E_tau_s: float = 0.0
    E_tau_k: float = 0.0


@dataclass(frozen=True)
class SeparatorGroups:
    tau_d_e: float
    nu_e: float
    kappa: float


@dataclass(frozen=True)
class GroupedParameterSet:
    """Grouped parameters of the normalized P2D model.

    ``k_gamma_f`` multiplies the diffusion-potential term of the electrolyte
    current and equals ``(1 - t_plus) * (1 + dln f/dln c)``; the area that
    would make it ``gamma * k_f`` cancels against the ``A`` in the normalized
    current, so it is left out.
    """

    neg: ElectrodeGroups
    sep: SeparatorGroups
    pos: ElectrodeGroups
    r_f: float
    gamma: float
    k_gamma_f: float
    beta_inv: float
    T_ref: float = 298.15
    # Reference (1C) current in A; ``I / i_ref`` is the normalized current.
    i_ref: float = 1.0

    def __post_init__(self):
        for key, value in self.flat().items():
            if key.endswith(("E_tau_s", "E_tau_k")):
                if not math.isfinite(value):
                    raise ParameterError(key, "must be finite")
            elif key == "r_f":
                if not (math.isfinite(value) and value >= 0.0):
                    raise ParameterError(key, f"must be non-negative, got {value}")
            else:
                _positive(key, value)

    def region(self, name: str):
        return getattr(self, name)

    def flat(self) -> dict[str, float]:
        """Flatten to ``{"neg.tau_d_s": ..., "r_f": ...}``."""
        out = {}
        for name in ("neg", "sep", "pos"):
            sub = getattr(self, name)
            for f in fields(sub):
                out[f"{name}.{f.name}"] = getattr(sub, f.name)
        for f in ("r_f", "gamma", "k_gamma_f", "beta_inv", "T_ref", "i_ref"):
            out[f] = getattr(self, f)
        return out

    def with_values(self, values: dict[str, float]) -> "GroupedParameterSet":
        """Return a copy with the dotted keys in ``values`` replaced."""
        subs = {name: {} for name in ("neg", "sep", "pos")}
        top = {}
        for key, value in values.items():
            if "." in key:
                region, f = key.split(".", 1)
                if region not in subs:
                    raise KeyError(key)
                subs[region][f] = float(value)
            else:
                top[key] = float(value)
        kwargs = {name: replace(getattr(self, name), **subs[name]) for name in subs}
        return replace(self, **kwargs, **top)

    @classmethod
    def from_flat(cls, values: dict[str, float]) -> "GroupedParameterSet":
        subs = {}
        for name, typ in (("neg", ElectrodeGroups), ("sep", SeparatorGroups), ("pos", ElectrodeGroups)):
            kw = {f.name: float(values[f"{name}.{f.name}"]) for f in fields(typ) if f"{name}.{f.name}" in values}
            subs[name] = typ(**kw)
        top = {k: float(values[k]) for k in ("r_f", "gamma", "k_gamma_f", "beta_inv")}
        for k in ("T_ref", "i_ref"):
            if k in values:
                top[k] = float(values[k])
        return cls(**subs, **top)


# The 20 grouped entries of the P2D model that are free for identification.
MODEL_PARAMETER_KEYS = tuple(
    [f"{e}.{f}" for e in ("neg", "pos") for f in ("tau_d_s", "tau_c_s", "tau_k", "tau_d_e", "nu_e", "kappa", "sigma")]
    + ["sep.tau_d_e", "sep.nu_e", "sep.kappa", "r_f", "gamma", "k_gamma_f"]
)


def group(phys: PhysicalParameterSet) -> GroupedParameterSet:
    """Map an as-made parameter set onto the grouped parameters."""
    validate_physical(phys)
    i_ref, A, b = phys.i_ref, phys.A, phys.b
    c_e_ref = phys.c_e_ref

    def electrolyte(r):
        D_eff = r.eps_e**b * phys.D_e
        kappa_eff = r.eps_e**b * phys.kappa_e
        tau_d_e = r.L**2 / (D_eff / r.eps_e)
        nu_e = FARADAY * r.eps_e * r.L * c_e_ref / i_ref
        kappa = A * kappa_eff / (r.L * i_ref)
        return tau_d_e, nu_e, kappa

    def electrode(e: ElectrodeProperties) -> ElectrodeGroups:
        tau_d_e, nu_e, kappa = electrolyte(e)
        return ElectrodeGroups(
            tau_d_s=e.R_s**2 / e.D_s,
            tau_c_s=FARADAY * e.eps_s * e.L * A * e.c_s_max / i_ref,
            tau_k=e.R_s / (e.k_n * math.sqrt(c_e_ref)),
            tau_d_e=tau_d_e,
            nu_e=nu_e,
            kappa=kappa,
            sigma=A * (e.eps_s * e.sigma_s) / (e.L * i_ref),
            E_tau_s=e.E_Ds,
            E_tau_k=e.E_kn,
        )

    tau_d_e, nu_e, kappa = electrolyte(phys.sep)
    return GroupedParameterSet(
        neg=electrode(phys.neg),
        sep=SeparatorGroups(tau_d_e=tau_d_e, nu_e=nu_e, kappa=kappa),
        pos=electrode(phys.pos),
        r_f=phys.R_f * i_ref / A,
        gamma=(1.0 - phys.t_plus) / A,
        k_gamma_f=(1.0 - phys.t_plus) * phys.f_activity_term,
        beta_inv=GAS_CONSTANT * phys.T_ref / (phys.alpha * FARADAY),
        T_ref=phys.T_ref,
        i_ref=phys.i_ref,
    )


def secondary_quantities(phys: PhysicalParameterSet) -> dict[str, float]:
    """Secondary derived quantities: interfacial area, filler fraction, thicknesses."""
    out = {}
    for name in ("neg", "pos"):
        e = phys.region(name)
        out[f"{name}.a_s"] = 3.0 * e.eps_s / e.R_s
        out[f"{name}.eps_f"] = 1.0 - e.eps_s - e.eps_e
        out[f"{name}.sigma_s_eff"] = e.eps_s * e.sigma_s
    for name in ("neg", "sep", "pos"):
        r = phys.region(name)
        out[f"{name}.D_e_eff"] = r.eps_e**phys.b * phys.D_e
        out[f"{name}.kappa_e_eff"] = r.eps_e**phys.b * phys.kappa_e
    out["delta_neg"] = phys.neg.L
    out["delta_sep"] = phys.neg.L + phys.sep.L
    out["cell_thickness"] = phys.neg.L + phys.sep.L + phys.pos.L
    return out


@dataclass(frozen=True)
class ScalingTransform:
    """Scale factors of the unidentifiable families.

    ``mu`` acts on the particle radius/diffusivity/rate constant, ``mu1`` on
    thicknesses and ``mu2`` on the cross-sectional area.
    """

    mu: float = 1.0
    mu1: float = 1.0
    mu2: float = 1.0

    def __post_init__(self):
        for f in ("mu", "mu1", "mu2"):
            _positive(f, getattr(self, f))


def apply_scaling(phys: PhysicalParameterSet, s: ScalingTransform) -> PhysicalParameterSet:
    """Move ``phys`` along the scaling families; the grouped set is unchanged."""
    mu, mu1, mu2 = s.mu, s.mu1, s.mu2
    b = phys.b

    def electrode(e: ElectrodeProperties) -> ElectrodeProperties:
        return replace(
            e,
            R_s=mu * e.R_s,
            D_s=mu**2 * e.D_s,
            k_n=mu * e.k_n,
            L=mu1 * e.L,
            eps_e=e.eps_e / mu1,
            eps_s=e.eps_s / (mu1 * mu2),
            sigma_s=mu1**2 * e.sigma_s,
        )

    return replace(
        phys,
        neg=electrode(phys.neg),
        sep=SeparatorProperties(eps_e=phys.sep.eps_e / mu1, L=mu1 * phys.sep.L),
        pos=electrode(phys.pos),
        A=mu2 * phys.A,
        D_e=mu1 ** (b + 1) * phys.D_e,
        kappa_e=mu1 ** (b + 1) / mu2 * phys.kappa_e,
        R_f=mu2 * phys.R_f,
        t_plus=1.0 - (1.0 - phys.t_plus) * mu2,
        f_activity_term=phys.f_activity_term / mu2,
    )


def physical_to_dict(p: PhysicalParameterSet) -> dict[str, dict[str, float]]:
    """Sectioned representation used by the config files."""
    cell = {f.name: getattr(p, f.name) for f in fields(p) if f.name not in ("neg", "sep", "pos")}
    return {
        "cell": cell,
        "neg": dataclasses.asdict(p.neg),
        "sep": dataclasses.asdict(p.sep),
        "pos": dataclasses.asdict(p.pos),
    }


def physical_from_dict(d: dict[str, dict[str, float]]) -> PhysicalParameterSet:
    def pick(typ, section):
        names = {f.name for f in fields(typ)}
        unknown = set(section) - names
        if unknown:
            raise ParameterError(sorted(unknown)[0], "unknown key")
        try:
            return typ(**{k: float(v) for k, v in section.items()})
        except TypeError as exc:
            raise ParameterError(typ.__name__, str(exc)) from None

    cell = dict(d.get("cell", {}))
    names = {f.name for f in fields(PhysicalParameterSet)} - {"neg", "sep", "pos"}
    unknown = set(cell) - names
    if unknown:
        raise ParameterError(sorted(unknown)[0], "unknown key")
    missing = {"A", "D_e", "kappa_e", "t_plus", "f_activity_term", "R_f", "c_e_ref", "i_ref"} - set(cell)
    if missing:
        raise ParameterError(sorted(missing)[0], "missing key")
    return PhysicalParameterSet(
        neg=pick(ElectrodeProperties, d["neg"]),
        sep=pick(SeparatorProperties, d["sep"]),
        pos=pick(ElectrodeProperties, d["pos"]),
        **{k: float(v) for k, v in cell.items()},
    )
