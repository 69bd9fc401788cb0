"""Exceptions raised by the library.

The CLI maps these onto exit codes; library code only raises them.
"""


class MisfError(Exception):
    """Base class for every error raised by misf_inpaint."""


class ContractError(MisfError, ValueError):
    """A shape, layout or call-order precondition was violated."""


class NumericError(MisfError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConfigError(MisfError, ValueError):
    """A configuration key or value was rejected."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ImageFormatError(MisfError, ValueError):
    """An image file is unsupported or truncated."""


class MaskBucketError(MisfError, RuntimeError):
    """The mask generator could not reach the requested hole-ratio bucket."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved ratio {achieved:.4f})")
        self.achieved = achieved


class CheckpointError(MisfError, ValueError):
    """A checkpoint is missing a tensor or holds one of the wrong shape."""

    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.name = name
