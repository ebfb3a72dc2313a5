"""Exception taxonomy shared across the package.

Every error the CLI can surface derives from CapfewError; exit_code is
what the CLI process returns when that category aborts a run.
"""


class CapfewError(Exception):
    exit_code = 1


class ConfigError(CapfewError):
    """Invalid configuration value or axis."""

    exit_code = 2


class DimensionError(CapfewError):
    """Operand shapes incompatible with the requested operation."""

    exit_code = 3


class FormatError(CapfewError):
    """Store or checkpoint violates its declared binary layout."""

    exit_code = 4


class CorruptionError(FormatError):
    """File ends or contradicts itself mid-record; carries the byte offset."""

    exit_code = 5

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class SamplingError(CapfewError):
    """Episode request cannot be satisfied by the available records."""

    exit_code = 6


class ContractError(CapfewError):
    """Caller violated an API contract (e.g. non-scalar objective)."""

    exit_code = 7


class OracleScopeError(CapfewError):
    """Input exceeds the bounds a brute-force oracle is defined for."""

    exit_code = 8


class DegenerateInputError(CapfewError):
    """Numerically degenerate input (e.g. zero-norm frame vector)."""

    exit_code = 9


class NumericError(CapfewError):
    """Non-finite value surfaced during training; aborts with diagnostics."""

    exit_code = 10


class CheckpointMismatchError(CapfewError):
    """Checkpoint contents disagree with the run configuration."""

    exit_code = 11
