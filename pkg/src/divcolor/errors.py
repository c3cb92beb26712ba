"""Exception hierarchy.

The CLI maps these onto exit codes: usage problems exit 2, data problems
exit 3 and numerical failures exit 4.
"""


class DivColorError(Exception):
    exit_code = 1


class UsageError(DivColorError, ValueError):
    exit_code = 2


class DimensionError(UsageError):
    """Operand shapes do not fit together."""


class DataError(DivColorError):
    exit_code = 3


class EmptyCorpusError(DataError, ValueError):
    pass


class RankError(DataError, ValueError):
    """Fewer non-degenerate principal directions than requested."""

    def __init__(self, message: str, attainable: int):
        super().__init__(message)
        self.attainable = attainable


class CheckpointError(DataError):
    pass


class CorruptCheckpointError(CheckpointError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class VersionMismatchError(CheckpointError):
    def __init__(self, found: int, expected: int):
        super().__init__(f"checkpoint format version {found}, expected {expected}")
        self.found = found
        self.expected = expected


class NumericalError(DivColorError, ArithmeticError):
    exit_code = 4


class DegenerateBatchError(UsageError):
    """Batch statistics are undefined for a single-item batch."""
