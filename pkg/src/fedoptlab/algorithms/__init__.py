"""Round-based optimizers over finite-sum problems."""

from .gd import DivergenceGuardError, cgd, dcsgd, dcsgd_ef, ef_schedule
from .diana import (
    diana,
    diana_lyapunov,
    svrg_diana,
    vr_diana,
    vr_diana_lyapunov,
    vr_diana_lyapunov_parts,
)
from .client_sampling import SAMPLING_MODES, dsgd_ocs, fedavg_ocs
from .fedshuffle import (
    PRESETS,
    GenParams,
    fedshuffle,
    fedshuffle_gen,
    fedshuffle_mvr,
    implied_weights,
    preset_params,
    sample_weighted_output,
)

__all__ = [
    "DivergenceGuardError",
    "cgd",
    "dcsgd",
    "dcsgd_ef",
    "ef_schedule",
    "diana",
    "diana_lyapunov",
    "svrg_diana",
    "vr_diana",
    "vr_diana_lyapunov",
    "vr_diana_lyapunov_parts",
    "SAMPLING_MODES",
    "dsgd_ocs",
    "fedavg_ocs",
    "PRESETS",
    "GenParams",
    "fedshuffle",
    "fedshuffle_gen",
    "fedshuffle_mvr",
    "implied_weights",
    "preset_params",
    "sample_weighted_output",
]
