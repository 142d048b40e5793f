"""Error taxonomy shared by all modules."""


class NavfuseError(Exception):
    """Base class for all package errors."""


class DimensionError(NavfuseError):
    """Shape / dimension mismatch in a numeric operation."""


class NumericError(NavfuseError):
    """Non-finite values or other numeric-domain violations."""


class ConfigError(NavfuseError):
    """Invalid configuration value or unknown option."""


class ContractError(NavfuseError):
    """A caller violated an operation's precondition."""


class FormatError(NavfuseError):
    """Malformed input file (binary or text)."""


class CheckpointError(NavfuseError):
    """Checkpoint version/shape mismatch or corruption."""
