"""Exception types shared across the package.

Every error raised by cyclelife derives from :class:`CycleLifeError`, so
callers can catch one base class. Errors that carry structured context
(field names, cell ids) expose them as attributes.
"""


class CycleLifeError(Exception):
    """Base class for all cyclelife errors."""


# --- data ingestion / file format ---------------------------------------

class MissingFileError(CycleLifeError):
    pass


class SchemaViolationError(CycleLifeError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class MonotonicityViolationError(CycleLifeError):
    def __init__(self, cell_id: str, cycle_index: int, reason: str):
        super().__init__(f"cell {cell_id!r}, cycle {cycle_index}: {reason}")
        self.cell_id = cell_id
        self.cycle_index = cycle_index


class InvalidParamsError(CycleLifeError):
    pass


class UnknownCellIdError(CycleLifeError):
    pass


class OverlappingSplitsError(CycleLifeError):
    pass


# --- feature construction ------------------------------------------------

class DegenerateCurveError(CycleLifeError):
    pass


class MissingCycleError(CycleLifeError):
    def __init__(self, cell_id: str, cycle_index: int):
        super().__init__(f"cell {cell_id!r} has no cycle {cycle_index}")
        self.cell_id = cell_id
        self.cycle_index = cycle_index


class MissingBaselineCycleError(CycleLifeError):
    pass


class EmptyWindowError(CycleLifeError):
    pass


class WindowExceedsLifeError(CycleLifeError):
    pass


class WindowExceedsDataError(CycleLifeError):
    pass


class ShiftExceedsDataError(CycleLifeError):
    pass


class DegenerateVarianceError(CycleLifeError):
    pass


# --- network / optimizer --------------------------------------------------

class InvalidArchitectureError(CycleLifeError):
    pass


class ShapeMismatchError(CycleLifeError):
    pass


class LengthMismatchError(CycleLifeError):
    pass


class EmptyInputError(CycleLifeError):
    pass


class StaleCacheError(CycleLifeError):
    pass


class NonFiniteGradientError(CycleLifeError):
    pass


class NonFiniteLossError(CycleLifeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# --- baseline / metrics ---------------------------------------------------

class DegenerateDesignError(CycleLifeError):
    pass


class ZeroActualError(CycleLifeError):
    pass


# --- model artifact ---------------------------------------------------------

class ArtifactVersionMismatchError(CycleLifeError):
    pass
