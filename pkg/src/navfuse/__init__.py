"""navfuse: camera+LiDAR fusion perception and navigation pipeline."""

__version__ = "0.1.0"

from .errors import (CheckpointError, ConfigError, ContractError, DimensionError,
                     FormatError, NavfuseError, NumericError)

__all__ = [
    "CheckpointError", "ConfigError", "ContractError", "DimensionError",
    "FormatError", "NavfuseError", "NumericError", "__version__",
]
