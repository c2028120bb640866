"""Exception hierarchy for the exfil-bert pipeline."""
from __future__ import annotations


class ExfilBertError(Exception):
    """Base class for all pipeline errors."""


class CorpusError(ExfilBertError, ValueError):
    """Raised when a corpus cannot be ingested, split or sampled."""


class DegenerateRocError(ExfilBertError, ValueError):
    """Raised when a score set lacks one of the two classes."""


class ThresholdTransferError(ExfilBertError, ValueError):
    """Raised when an operating point is applied on the split it was fit on."""


class CheckpointError(ExfilBertError, ValueError):
    """Raised for unreadable or inconsistent checkpoint files."""


class PlanConfigError(ExfilBertError, ValueError):
    """Raised when an experiment plan or config file is invalid."""


class TrainingError(ExfilBertError, RuntimeError):
    """Raised when optimisation hits a non-finite loss or gradient."""

    def __init__(self, message: str, *, step: int | None = None, parameter: str | None = None) -> None:
        super().__init__(message)
        self.step = step
        self.parameter = parameter
