"""Hierarchical token-level GRPO for a toy masked-diffusion policy."""
from .errors import ConfigError, TrainingError

__all__ = ["ConfigError", "TrainingError"]
__version__ = "0.1.0"
