"""Exception types shared across the pipeline.

Every error raised by twinx derives from TwinxError so callers (and the
CLI exit-code mapping) can distinguish our failures from programming bugs.
"""

from __future__ import annotations


class TwinxError(Exception):
    """Base class for all twinx errors."""


class ConfigError(TwinxError):
    """Invalid user configuration (CLI exit code 2)."""


class InvalidConfig(ConfigError):
    """Synthetic-generator config violates its invariants."""


class DataError(TwinxError):
    """Runtime data problem (CLI exit code 3)."""


class MissingColumn(DataError):
    def __init__(self, name: str):
        super().__init__(f"required column missing: {name}")
        self.name = name


class EmptyFile(DataError):
    pass


class NonMonotoneTime(DataError):
    pass


class AllRowsDropped(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class InvalidArch(ConfigError):
    pass


class WindowTooShort(DataError):
    pass


class Diverged(DataError):
    """Training loss became non-finite."""


class Singular(DataError):
    """Residual covariance is not positive definite after shrinkage."""


class TooFewSamples(DataError):
    pass


class TooFewSignal(DataError):
    """Residual distribution is degenerate (zero distance threshold)."""


class DimensionMismatch(DataError):
    pass


class TooManyFeatures(ConfigError):
    """Exact enumeration guard: more features than 2^M enumeration allows."""


class DegenerateSystem(DataError):
    """Kernel-weighted regression matrix is singular."""


class EmptySet(DataError):
    pass


class EmptyInput(DataError):
    pass


class ModelFormatError(DataError):
    """Persisted model document failed schema validation."""


class InvariantViolation(TwinxError):
    """An internal contract failed after computation (CLI exit code 4)."""
