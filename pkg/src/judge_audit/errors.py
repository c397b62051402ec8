from __future__ import annotations

from pathlib import Path
from typing import Optional, Union


class JudgeAuditError(RuntimeError):
    """Base class for every error raised by judge_audit."""


class InputError(JudgeAuditError):
    """Raised when an input file, record or configuration is invalid."""


class MetricUndefinedError(JudgeAuditError):
    """Raised when a statistic's preconditions fail on otherwise valid data."""


class _LocatedInputError(InputError):
    def __init__(
        self,
        message: str,
        path: Optional[Union[str, Path]] = None,
        line: Optional[int] = None,
    ) -> None:
        self.path = Path(path) if path is not None else None
        self.line = line
        location = ""
        if self.path is not None:
            location = f"{self.path.name}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class ParseError(_LocatedInputError):
    """A row could not be parsed."""


class ValidationError(_LocatedInputError):
    """A parsed record or dataset violates an invariant."""


class MixedScaleError(_LocatedInputError):
    """A file mixes unit-scale and 0-100 judge scores."""


class ConfigError(InputError):
    """A configuration value is out of range or inconsistent."""


class UnknownCandidateError(InputError):
    """An edge references a prompt or candidate that does not exist."""


class LengthMismatchError(InputError):
    pass


class PositivityError(InputError):
    """A query probability is not strictly positive."""


class UnlabeledError(MetricUndefinedError):
    """The operation needs oracle labels that are missing."""


class DegenerateVarianceError(MetricUndefinedError):
    pass


class NoComparablePairsError(MetricUndefinedError):
    pass


class AllSkippedError(MetricUndefinedError):
    pass


class DegenerateDenominatorError(MetricUndefinedError):
    pass


class TooManySkipsError(MetricUndefinedError):
    """Too many bootstrap resamples left the statistic undefined."""


class UnlabeledOracleBestError(MetricUndefinedError):
    pass


class DegenerateInputError(MetricUndefinedError):
    pass


class NoBracketError(MetricUndefinedError):
    """A target cannot be bracketed on the searched interval."""


class InfeasibleError(MetricUndefinedError):
    pass


class InsufficientDataError(MetricUndefinedError):
    pass


class InsufficientSamplesError(MetricUndefinedError):
    pass
