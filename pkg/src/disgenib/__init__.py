"""Disentangled generative information-bottleneck training and few-shot
evaluation at desk scale, on a self-contained float64 autodiff core."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContractError,
    DisgenibError,
    FormatError,
    NumericError,
    ParseError,
    ShapeError,
)
from .tensor import OptState, RngStream, Tensor, adam_step, apply_primitive, backward, grad_check, seeded_rng

__all__ = [
    "ConfigError",
    "ContractError",
    "DisgenibError",
    "FormatError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "OptState",
    "RngStream",
    "Tensor",
    "adam_step",
    "apply_primitive",
    "backward",
    "grad_check",
    "seeded_rng",
]
