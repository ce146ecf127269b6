"""Exception hierarchy shared by every ecgc module.

Each error carries a stable ``code`` (its class name) so the CLI can print a
machine-parseable first token and map it to an exit status.
"""

from __future__ import annotations


class EcgcError(Exception):
    """Base class for all library errors."""

    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


# data
class MissingFile(EcgcError, FileNotFoundError):
    exit_code = 10


class MalformedRow(EcgcError, ValueError):
    exit_code = 11

    def __init__(self, line: int, reason: str, report: list[tuple[int, str]] | None = None):
        self.line = line
        self.reason = reason
        self.report = report if report is not None else [(line, reason)]
        extra = f" (+{len(self.report) - 1} more rows)" if len(self.report) > 1 else ""
        super().__init__(f"line {line}: {reason}{extra}")


class UnknownRhythmCode(EcgcError, ValueError):
    exit_code = 12

    def __init__(self, code: str, line: int | None = None):
        self.rhythm_code = code
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{code!r}{where}")


class EmptyDataset(EcgcError, ValueError):
    exit_code = 13


class InvalidProportions(EcgcError, ValueError):
    exit_code = 14


# transforms
class LengthMismatch(EcgcError, ValueError):
    exit_code = 20


class IndexOutOfRange(EcgcError, IndexError):
    exit_code = 21


class UnknownAugmentation(EcgcError, ValueError):
    exit_code = 22


class InsufficientAugmentations(EcgcError, ValueError):
    exit_code = 23


# attributes
class DegenerateStats(EcgcError, ValueError):
    exit_code = 30


class DimensionMismatch(EcgcError, ValueError):
    exit_code = 31


class MissingAttributes(EcgcError, ValueError):
    exit_code = 32

    def __init__(self, record_ids):
        self.record_ids = list(record_ids)
        shown = ", ".join(self.record_ids[:5])
        more = f" ... ({len(self.record_ids)} total)" if len(self.record_ids) > 5 else ""
        super().__init__(f"records without attributes: {shown}{more}")


class NoPeaksDetected(EcgcError, ValueError):
    exit_code = 33


# pairing
class WrongStrategy(EcgcError, ValueError):
    exit_code = 40


class BatchTooLarge(EcgcError, ValueError):
    exit_code = 41


class EmptyPositive(EcgcError, ValueError):
    exit_code = 42


# nn
class ShapeMismatch(EcgcError, ValueError):
    exit_code = 50


class NotScalar(EcgcError, ValueError):
    exit_code = 51


class GraphReused(EcgcError, RuntimeError):
    exit_code = 52


class NonFiniteValue(EcgcError, FloatingPointError):
    exit_code = 53


class CorruptCheckpoint(EcgcError, ValueError):
    exit_code = 54


# objective
class ZeroVector(EcgcError, ValueError):
    exit_code = 60


class NoPositive(EcgcError, ValueError):
    exit_code = 61

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} has no positive entry")


class MaskAsymmetry(EcgcError, ValueError):
    exit_code = 62


class LabelOutOfRange(EcgcError, ValueError):
    exit_code = 63


class SingleClass(EcgcError, ValueError):
    exit_code = 64


# cli
class ConfigError(EcgcError, ValueError):
    exit_code = 2


class IoError(EcgcError, OSError):
    exit_code = 70


class MissingSummary(EcgcError, FileNotFoundError):
    exit_code = 71


class OutputLocked(EcgcError, RuntimeError):
    exit_code = 72
