"""Sequential model-based hyperparameter tuning with a Kriging surrogate."""

from .errors import DomainError, TrainingFailed, TunerAbort
from .space import ParamSpec, SearchSpace, get_preset, validate_space

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "ParamSpec",
    "SearchSpace",
    "TrainingFailed",
    "TunerAbort",
    "get_preset",
    "validate_space",
]
