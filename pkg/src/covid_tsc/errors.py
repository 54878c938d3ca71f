"""Exception hierarchy.

Everything raised on purpose by this package derives from :class:`TSCError`.
:class:`InputError` covers bad data, bad configuration and bad arguments
(CLI exit code 2); :class:`ComputationError` covers failures that happen while
computing on otherwise valid input (CLI exit code 3).
"""

from __future__ import annotations


class TSCError(Exception):
    """Base class for all package errors."""


class InputError(TSCError, ValueError):
    """Invalid user-supplied data, arguments or configuration."""


class ComputationError(TSCError, RuntimeError):
    """A computation failed on valid input."""


# dataio
class MissingClassDirectory(InputError):
    pass


class EmptyDataset(InputError):
    pass


class InsufficientSamples(InputError):
    def __init__(self, label: str, available: int, requested: int):
        super().__init__(
            f"class {label!r} has {available} samples, {requested} requested"
        )
        self.label = label
        self.available = available
        self.requested = requested


class InvalidFraction(InputError):
    pass


class ClassTooSmall(InputError):
    pass


class InvalidK(InputError):
    pass


class InvalidSchema(InputError):
    pass


# stats / imaging
class EmptyImage(InputError):
    pass


class DecodeFailure(ComputationError):
    def __init__(self, sample_id: str, reason: str = ""):
        msg = f"cannot decode sample {sample_id!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.sample_id = sample_id


# model
class InvalidShape(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class SchemaMismatch(InputError):
    pass


class EmptyTrainingSet(InputError):
    pass


class NonFiniteLoss(ComputationError):
    pass


# metrics
class LengthMismatch(InputError):
    pass


class UnknownLabel(InputError):
    pass


class EmptyMatrix(InputError):
    pass


# cascade
class InvalidDistribution(InputError):
    pass


class UnfittedStage(InputError):
    pass


class EmptyTestSet(InputError):
    pass


# harness / report
class ConfigInvalid(InputError):
    pass


class LeakageError(ComputationError):
    """Holdout ids showed up in a training or validation manifest."""


class OutputDirLocked(InputError):
    pass


class ParseFailure(InputError):
    pass


class NonSquareMatrix(ParseFailure):
    pass
