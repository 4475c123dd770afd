"""Cross-modal point cloud completion on a small numpy autodiff engine."""
from .config import Config, desk_config, tiny_config
from .errors import (CheckpointMismatch, ConfigError, ContractError, DataError, DimensionError,
                     FormatError, NonFiniteLossError, PCCError)
from .model import CompletionModel

__version__ = "0.1.0"

__all__ = [
    "Config", "desk_config", "tiny_config", "CompletionModel",
    "PCCError", "ConfigError", "DimensionError", "ContractError", "FormatError",
    "DataError", "NonFiniteLossError", "CheckpointMismatch",
]
