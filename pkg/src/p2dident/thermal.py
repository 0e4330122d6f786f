"""Arrhenius temperature law for rate and transport parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import GAS_CONSTANT


@dataclass(frozen=True)
class ArrheniusLaw:
    ref: float
    E: float
    T_ref: float = 298.15

    def __post_init__(self):
        if not self.T_ref > 0:
            raise ValueError(f"T_ref must be positive, got {self.T_ref}")


def arrhenius(law: ArrheniusLaw, T: float) -> float:
    """``ref * exp(E/R_g * (1/T_ref - 1/T))``."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    if T == law.T_ref or law.E == 0.0:
        return law.ref
    return law.ref * math.exp(law.E / GAS_CONSTANT * (1.0 / law.T_ref - 1.0 / T))


def time_constant_at(tau_ref: float, E: float, T: float, T_ref: float) -> float:
    """A time constant inversely proportional to an Arrhenius-activated rate.

    ``E`` is the activation energy of the underlying rate (D_s or k_n), so the
    time constant falls as the temperature rises when ``E > 0``.
    """
    return tau_ref / arrhenius(ArrheniusLaw(1.0, E, T_ref), T)


def thermal_voltage_at(beta_inv_ref: float, T: float, T_ref: float) -> float:
    return beta_inv_ref * T / T_ref


def time_constant_series(tau_ref: float, E: float, T, T_ref: float) -> np.ndarray:
    """Vectorized :func:`time_constant_at` over a temperature series."""
    T = np.asarray(T, dtype=float)
    if E == 0.0:
        return np.full(T.shape, tau_ref)
    out = tau_ref / np.exp(E / GAS_CONSTANT * (1.0 / T_ref - 1.0 / T))
    return np.where(T == T_ref, tau_ref, out)
