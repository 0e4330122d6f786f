"""Nominal synthetic cell used by the tests, the generator and the CLI."""
from __future__ import annotations

from .ocp import OcpCurve, default_negative, default_positive
from .params import ElectrodeProperties, PhysicalParameterSet, SeparatorProperties, group

# Stoichiometries of the rested, fully charged cell.
SOC_FULL = (0.80, 0.34)
V_MAX = 4.2
V_MIN = 3.65


def nominal_physical() -> PhysicalParameterSet:
    """Graphite / layered-oxide cell with a 3 A one-hour rate."""
    return PhysicalParameterSet(
        neg=ElectrodeProperties(
            D_s=2.5e-14, R_s=5e-6, eps_s=0.6, eps_e=0.3, L=8.5e-5, k_n=6e-11,
            c_s_max=31000.0, sigma_s=100.0, E_Ds=35000.0, E_kn=30000.0,
        ),
        sep=SeparatorProperties(eps_e=0.45, L=2.5e-5),
        pos=ElectrodeProperties(
            D_s=4e-14, R_s=4e-6, eps_s=0.5, eps_e=0.35, L=7.5e-5, k_n=4.5e-11,
            c_s_max=51000.0, sigma_s=10.0, E_Ds=25000.0, E_kn=40000.0,
        ),
        A=0.1,
        D_e=5e-10,
        kappa_e=1.0,
        t_plus=0.38,
        f_activity_term=1.2,
        R_f=3e-4,
        c_e_ref=1000.0,
        i_ref=3.0,
    )


def nominal_grouped():
    return group(nominal_physical())


def nominal_ocps() -> tuple[OcpCurve, OcpCurve]:
    return default_negative(), default_positive()
