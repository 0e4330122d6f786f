"""Synthetic cycling data from the thermally coupled P2D model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DataSet
from .fit import ModelSetup
from .p2d import P2dModel
from .params import GroupedParameterSet
from .protocol import DEFAULT_RATES, HeatingLag, cccv_block, run_protocol

BLOCK_GAP_S = 10.0


@dataclass(frozen=True)
class SynthConfig:
    rates: tuple = DEFAULT_RATES
    noise_sd: float = 1e-3  # V
    seed: int = 20240611
    heating_gain: float = 1.0  # K per (I/I_1C)^2 at steady state
    heating_tau: float = 600.0  # s
    T_amb: float | None = None  # K, defaults to the reference temperature


def generate(grouped: GroupedParameterSet, setup: ModelSetup, config: SynthConfig | None = None,
             model_kind: str = "P2DT") -> DataSet:
    """Run one CCCV block per C-rate, each from the rested state ``setup.soc``.

    Blocks are laid end to end with a short gap and tagged with their index.
    Gaussian voltage noise of ``config.noise_sd`` is added with a generator
    seeded by ``config.seed``; ``meta["v_clean"]`` keeps the noiseless trace.
    """
    config = config or SynthConfig()
    model = setup.build(model_kind, grouped)
    T_amb = grouped.T_ref if config.T_amb is None else config.T_amb
    heat = HeatingLag(T_amb, setup.i_1c, config.heating_gain, config.heating_tau)
    parts = []
    t_offset = 0.0
    for b, (label, rate) in enumerate(config.rates):
        steps = cccv_block(rate, setup.i_1c, setup.v_min, setup.v_max, label)
        # Each block starts from a rested cell.
        if isinstance(model, P2dModel):
            state = model.initial_state(setup.soc, T=T_amb)
        else:
            state = model.initial_state(setup.soc)
        tr = run_protocol(model, steps, state=state, T_signal=heat, gains=setup.pid, i_1c=setup.i_1c)
        flag = np.where(tr.flag == "CUTOFF", "CC", tr.flag)
        parts.append((tr.t + t_offset, tr.I, tr.v, tr.T, flag, np.full(len(tr), b)))
        t_offset = float(tr.t[-1] + t_offset + BLOCK_GAP_S)
    cols = [np.concatenate([p[k] for p in parts]) for k in range(6)]
    t, I, v, T, flag, block = cols
    rng = np.random.default_rng(config.seed)
    noise = rng.normal(0.0, config.noise_sd, v.size) if config.noise_sd > 0 else np.zeros(v.size)
    meta = {"seed": config.seed, "noise_sd": config.noise_sd, "model": model_kind, "v_clean": v,
            "rates": [label for label, _ in config.rates]}
    return DataSet(t, I, v + noise, T, flag.astype(object), block.astype(int), meta)
