"""
Error hierarchy shared by every module.
"""


class PulseError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(PulseError, ValueError):
    """A scalar parameter is outside its valid range."""


class ShapeError(PulseError, ValueError):
    """Tensor shapes do not agree."""


class ConfigError(PulseError, ValueError):
    """A configuration is structurally invalid."""


class CheckpointNotFoundError(PulseError, FileNotFoundError):
    """A checkpoint, input or profile file is missing."""

    def __init__(self, path: str):
        super().__init__(f"File not found: {path}")
        self.path = path


class DivergenceError(PulseError, ArithmeticError):
    """Training produced a non-finite loss."""
