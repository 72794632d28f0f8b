"""Exception types raised across the package.

Validation problems (bad input files, impossible configurations) derive from
:class:`ValidationError`; problems that only surface while fitting or
sampling derive from :class:`EstimationError`. The CLI maps the two families
to distinct exit codes.
"""


class DRDBError(Exception):
    """Base class for all package errors."""


class ValidationError(DRDBError, ValueError):
    pass


class EstimationError(DRDBError, RuntimeError):
    pass


class MissingColumn(ValidationError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"MissingColumn: {column}")


class NonBinaryTreatment(ValidationError):
    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(f"NonBinaryTreatment: row {row} has t={value!r}")


class NonFiniteValue(ValidationError):
    def __init__(self, row, column):
        self.row = row
        self.column = column
        super().__init__(f"NonFiniteValue: row {row}, column {column}")


class TooFewRows(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyArm(EstimationError):
    pass


class EmptySubgroup(EstimationError):
    pass


class RankDeficient(EstimationError):
    pass


class NoConvergence(EstimationError):
    def __init__(self, iterations, grad_norm):
        self.iterations = iterations
        self.grad_norm = grad_norm
        super().__init__(
            f"NoConvergence: Newton stopped after {iterations} iterations "
            f"with gradient norm {grad_norm:.3e}"
        )


class TooFewObservations(EstimationError):
    pass


class DegenerateFold(EstimationError):
    def __init__(self, message, fold=None):
        self.fold = fold
        prefix = f"fold {fold}: " if fold is not None else ""
        super().__init__(f"DegenerateFold: {prefix}{message}")
