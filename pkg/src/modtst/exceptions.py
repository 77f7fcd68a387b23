"""Exception hierarchy shared by every module."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible with a primitive."""


class ConfigError(ContractError):
    """An experiment or model configuration is invalid."""


class FormatError(ContractError):
    """A corpus or checkpoint file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GenerationError(ContractError):
    """Synthetic data generation hit a gap in the rule tables."""
