"""Exception hierarchy.

Every domain error carries a stable ``name`` (the class name) so the CLI can
emit it verbatim in machine-readable error reports.
"""

from __future__ import annotations


class DoseDidError(Exception):
    """Base class for all domain errors raised by the package."""

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.__class__.__name__)
        self.details = details

    @property
    def name(self) -> str:
        return self.__class__.__name__

    def to_dict(self) -> dict:
        out = {"error": self.name, "message": str(self)}
        if self.details:
            out["details"] = {k: _jsonable(v) for k, v in self.details.items()}
        return out


def _jsonable(v):
    if isinstance(v, (list, tuple, set)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    return str(v)


# panel ingestion / timing
class MissingColumn(DoseDidError):
    pass


class UnbalancedPanel(DoseDidError):
    pass


class NegativeDose(DoseDidError):
    pass


class DoseChangesPostTreatment(DoseDidError):
    pass


class TreatedInFirstPeriod(DoseDidError):
    pass


class NoPositiveDose(DoseDidError):
    pass


class NotTwoPeriod(DoseDidError):
    pass


class EmptyCell(DoseDidError):
    pass


# estimation
class BandwidthTooSmall(DoseDidError):
    pass


class NoUntreatedUnits(DoseDidError):
    pass


class DoseOutOfSupport(DoseDidError):
    pass


class DegenerateDose(DoseDidError):
    pass


class ZeroDoseVariance(DoseDidError):
    pass


class NoComparisonUnits(DoseDidError):
    pass


class MissingCells(DoseDidError):
    pass


class EmptyWindow(DoseDidError):
    pass


class EqualMeanDoses(DoseDidError):
    pass


# simulation / inference
class InvalidSpec(DoseDidError):
    pass


class NoAnalyticOracle(DoseDidError):
    pass


class AllReplicatesFailed(DoseDidError):
    pass
