"""Hidden-parameter MDP transition models with IBP-GP batch inference."""

from ._core import BACKEND
from .errors import ConfigError, HipMdpError, InvalidInputError, ModelFormatError, NumericalError

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConfigError", "HipMdpError", "InvalidInputError", "ModelFormatError",
           "NumericalError", "__version__"]
