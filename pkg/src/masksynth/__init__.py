"""Budget-constrained dynamic sensor-mask synthesis for final-state opacity."""

from .model import HmmSpec, MaskMdp, build_mask_mdp, emission_matrix, validate
from .policy import ConditioningMode, PolicyParams, zero_policy
from .scenarios import (
    GridworldConfig,
    build_gridworld,
    build_illustrative,
    default_gridworld_config,
    final_state_masking_policy,
    no_masking_policy,
)

__version__ = "0.1.0"

__all__ = [
    "HmmSpec",
    "MaskMdp",
    "build_mask_mdp",
    "emission_matrix",
    "validate",
    "ConditioningMode",
    "PolicyParams",
    "zero_policy",
    "GridworldConfig",
    "build_gridworld",
    "build_illustrative",
    "default_gridworld_config",
    "final_state_masking_policy",
    "no_masking_policy",
    "__version__",
]
