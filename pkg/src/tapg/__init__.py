"""Temporal action proposal generation with a global attention branch and a
local graph branch, on a small numpy autograd engine."""

from .config import RunConfig, load_config
from .model import ProposalModel
from .tensor import ConfigError, ShapeError, Tensor, no_grad, set_precision

__all__ = ["RunConfig", "load_config", "ProposalModel", "ConfigError", "ShapeError", "Tensor",
           "no_grad", "set_precision"]
__version__ = "0.1.0"
