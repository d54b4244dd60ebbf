"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
categorized exit statuses without a lookup table.
"""


class HerdTwinError(Exception):
    exit_code = 3


class UsageError(HerdTwinError):
    exit_code = 2


class DataError(HerdTwinError):
    exit_code = 3


class NumericalError(HerdTwinError):
    exit_code = 4


# core-model
class UnknownTreatmentCode(DataError, ValueError):
    pass


class IllegalTreatment(DataError, ValueError):
    pass


class TimestampBeforeEpoch(DataError, ValueError):
    pass


# ingest
class MissingFile(DataError, FileNotFoundError):
    pass


class SchemaMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


# aggregate
class EmptyInput(DataError, ValueError):
    pass


class EmptySeries(DataError, ValueError):
    pass


class MixedState(DataError, ValueError):
    pass


class MixedCohort(DataError, ValueError):
    pass


# filter
class InvalidCutoff(UsageError, ValueError):
    pass


class InvalidLength(UsageError, ValueError):
    pass


class SeriesTooShort(DataError, ValueError):
    pass


class SeriesHasGaps(DataError, ValueError):
    pass


class IncompleteDay(DataError, LookupError):
    pass


# fit
class MalformedParams(DataError, ValueError):
    pass


class InsufficientPoints(DataError, ValueError):
    pass


class SingularSystem(NumericalError):
    pass


# lstm
class ShapeMismatch(DataError, ValueError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class UntrainedModel(DataError):
    pass


class InvalidConfig(UsageError, ValueError):
    pass


# synth
class InvalidSpec(UsageError, ValueError):
    pass


# twin
class UnknownKey(DataError, KeyError):
    pass


class NoPriorPrediction(DataError):
    pass


class MissingPositiveControl(DataError):
    pass
