"""
Exceptions raised by bpinn-ageing.

Every exception carries the exit code the command-line interface uses when
it reaches :py:func:`bpinn_ageing.cli.main`:

====  ==========
code  meaning
====  ==========
0     ok
1     usage
2     I/O
3     divergence
4     validation
====  ==========
"""

from typing import Dict, Optional


class BPinnError(Exception):
    """Base class of all errors raised by the package."""

    exit_code = 1


class ValidationError(BPinnError, ValueError):
    """Invalid input: bad shapes, out-of-range values, inconsistent data."""

    exit_code = 4


class ConfigError(ValidationError):
    """Unknown or ill-typed configuration key."""


class LayerShapeError(ValidationError):
    """Weight, bias and input dimensions of a layer do not agree.

    :param layer_index: zero-based index of the offending layer
    """

    def __init__(self, layer_index: int, message: str):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


class OutOfSpanError(ValidationError):
    """A lookup fell outside the span of a series or the hull of a grid."""


class CapacityError(ValidationError):
    """More samples were requested than the data can provide."""

    def __init__(self, requested: int, capacity: int, what: str):
        self.requested = requested
        self.capacity = capacity
        super().__init__(
            f"requested {requested} {what} but only {capacity} are available"
        )


class ZeroVarianceError(ValidationError):
    """A probabilistic score was requested for a deterministic prediction."""


class SeriesIOError(BPinnError, OSError):
    """An input file is missing or malformed.

    :param line: 1-based line number of the offending row, if any
    """

    exit_code = 2

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f"{path}" if path is not None else "input"
        if line is not None:
            where += f", line {line}"
        super().__init__(f"{where}: {message}")


class NonFiniteLossError(BPinnError, ArithmeticError):
    """A loss evaluated to NaN or infinity.

    :param index: parameter index the failure is attributed to, or ``None``
    :param components: loss breakdown of the failing evaluation, if known
    """

    exit_code = 3

    def __init__(
        self,
        message: str,
        index: Optional[int] = None,
        components: Optional[Dict[str, float]] = None,
    ):
        self.index = index
        self.components = dict(components or {})
        if index is not None:
            message += f" (parameter {index} is not finite)"
        if self.components:
            detail = ", ".join(f"{k}={v!r}" for k, v in self.components.items())
            message = f"{message} [{detail}]"
        super().__init__(message)


class DivergenceError(BPinnError):
    """Training diverged; ``components`` holds the last loss breakdown."""

    exit_code = 3

    def __init__(self, message: str, components: Optional[Dict[str, float]] = None):
        self.components = dict(components or {})
        if self.components:
            detail = ", ".join(f"{k}={v!r}" for k, v in self.components.items())
            message = f"{message} [{detail}]"
        super().__init__(message)
