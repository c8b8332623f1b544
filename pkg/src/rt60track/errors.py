"""Exception hierarchy shared by all modules.

Each class carries the process exit code the CLI maps it to.
"""


class Rt60Error(Exception):
    exit_code = 1


class ArgumentError(Rt60Error, ValueError):
    """Invalid argument value or shape."""

    exit_code = 2


class DataError(Rt60Error):
    """Problem with input data (files, pools, manifests)."""

    exit_code = 3


class FormatError(DataError):
    """Malformed or unsupported file content."""


class RateError(FormatError):
    """Audio file at a sample rate other than 16 kHz."""

    def __init__(self, found_rate, expected_rate=16000):
        super().__init__(
            f"unsupported sample rate {found_rate} Hz (expected {expected_rate} Hz)"
        )
        self.found_rate = found_rate


class SizingError(DataError):
    """Source pools too small for the requested dataset."""


class SampleLookupError(DataError, KeyError):
    """Unknown sample or AIR identifier."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NumericError(Rt60Error):
    exit_code = 4


class DegenerateInputError(NumericError, ValueError):
    """Input without the variation an operation needs (constant, all zero)."""


class NoDecayError(NumericError):
    """Energy decay curve shows no fittable exponential decay."""


class StateError(Rt60Error, RuntimeError):
    """Operation called in the wrong model state (e.g. backward before forward)."""
