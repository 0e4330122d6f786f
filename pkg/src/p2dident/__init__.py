"""Grouped-parameter P2D, SPM and SPM_eq battery models with staged identification."""
from .params import (
    GroupedParameterSet,
    ParameterError,
    PhysicalParameterSet,
    ScalingTransform,
    apply_scaling,
    group,
)
from .ocp import OcpCurve, default_negative, default_positive
from .spm import CutoffEvent, SpmEqModel, SpmModel
from .p2d import NumericalError, P2dGrid, P2dModel, init_equilibrium, p2d_voltage

__version__ = "0.1.0"
