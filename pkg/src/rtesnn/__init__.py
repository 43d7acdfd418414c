"""Spiking neural networks trained for adversarial robustness.

Pure-numpy engine: a small reverse-mode autodiff core, LIF networks unrolled
over time, FGSM/PGD attacks (including per-timestep sub-network attacks),
AT / TRADES / RTE training loops and the cross-timestep transferability
analysis.
"""

from .errors import (
    ConfigError,
    ConsistencyError,
    ContractError,
    DimensionError,
    FormatError,
    RteError,
)
from .snn import LifConfig, SnnModel, aggregate_output, forward_timesteps
from .tensor import SurrogateSpec, Tape, Tensor, backward

__version__ = "0.1.0"
