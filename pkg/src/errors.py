"""Exception hierarchy. Each class carries the exit code the CLI maps it to."""

from typing import Dict, Optional, Sequence


class EivError(Exception):
    exit_code = 1


# --- usage (exit 1) ---

class ParameterError(EivError, ValueError):
    exit_code = 1


class ShapeError(EivError, ValueError):
    exit_code = 1


class OutputCollisionError(EivError):
    exit_code = 1


# --- data (exit 2) ---

class DataError(EivError, ValueError):
    exit_code = 2


class DegenerateSampleError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class DegenerateCoordinateError(DataError):
    pass


class SchemaError(DataError):
    pass


class EmptyDataError(DataError):
    pass


# --- numerical (exit 3) ---

class NumericalFailure(EivError, ArithmeticError):
    exit_code = 3


class SingularSystemError(NumericalFailure):
    pass


class SingularDesignError(NumericalFailure):
    pass


class LeverageSingularityError(NumericalFailure):
    pass


class DegenerateOrientationError(NumericalFailure):
    pass


class SignIndeterminateError(NumericalFailure):
    pass


class WeakInstrumentError(NumericalFailure):
    pass


class DegenerateInstrumentError(NumericalFailure):
    pass


class DegenerateDesignError(NumericalFailure):
    pass


class BootstrapInstabilityError(NumericalFailure):
    pass


class RankCollapseError(NumericalFailure):
    def __init__(self, message: str, subset: Optional[Sequence[int]] = None):
        super().__init__(message)
        self.subset = None if subset is None else list(subset)


class ReplicationFailureError(NumericalFailure):
    def __init__(self, message: str, diagnostics: Optional[Dict[str, list]] = None):
        super().__init__(message)
        # estimator tag -> list of (replication, message)
        self.diagnostics = diagnostics or {}
