"""EEGMobile student, EEGViT-TCNet teacher and the distillation protocol for
EEG gaze regression, on a small numpy autodiff engine."""

from .errors import ConfigError, ContractError, DimensionError, FormatError, NumericError
from .tensor import Tape, Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
]
