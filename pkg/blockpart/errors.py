"""
Exception hierarchy shared by every blockpart module.
"""

from typing import Any, List, Optional


class BlockpartError(Exception):
    """Base class for all errors raised by blockpart."""


class InputError(BlockpartError, ValueError):
    """Invalid ids, mismatched sizes or out-of-range parameters."""


class DomainError(BlockpartError, ArithmeticError):
    """A quantity is undefined for the given input (e.g. modularity of an edgeless graph)."""


class SamplingError(InputError):
    """Training pairs of the requested kind do not exist."""


class CheckpointError(BlockpartError):
    """Malformed checkpoint or parameter shapes inconsistent with the configuration."""


class CheckpointVersionError(CheckpointError):
    """Bad magic, unreadable header or unsupported format version."""


class NumericError(BlockpartError, ArithmeticError):
    """Non-finite values detected in a named layer."""

    def __init__(self, message: str, layer: Optional[str] = None):
        super().__init__(message)
        self.layer = layer


class TrainingError(BlockpartError):
    """Pre-training diverged; the loss trace up to the failure is attached."""

    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message)
        self.trace = list(trace or [])


class RefinerError(BlockpartError):
    """An external refiner failed; captured diagnostics are attached."""

    def __init__(self, message: str, stderr: str = "", returncode: Optional[int] = None):
        super().__init__(message)
        self.stderr = stderr
        self.returncode = returncode


class RefinerTimeout(RefinerError):
    """An external refiner exceeded its time budget (out-of-time)."""


class StreamAborted(BlockpartError):
    """A streaming step failed; results of the completed steps are preserved."""

    def __init__(self, message: str, partial: List[Any], step: int):
        super().__init__(message)
        self.partial = partial
        self.step = step
