"""Exception hierarchy.

Data problems (bad files, malformed rows, unknown cutoffs) and estimation
problems (too little data, singular designs, degenerate configurations) are
kept on separate branches so callers and the CLI can map them to distinct
exit codes.
"""


class RdextrapError(Exception):
    """Base class for all package errors."""


class DataError(RdextrapError):
    """Invalid input data or data request."""


class MissingColumn(DataError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"required column {column!r} not found")


class ParseError(DataError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class SharpComplianceViolation(DataError):
    def __init__(self, row):
        self.row = row
        super().__init__(
            f"row {row}: treatment status disagrees with the sharp assignment "
            "rule d = 1(x >= c)"
        )


class ComplianceViolation(DataError):
    """One-sided noncompliance violated: a unit below its cutoff is treated."""


class UnknownCutoff(DataError):
    def __init__(self, cutoff):
        self.cutoff = cutoff
        super().__init__(f"cutoff {cutoff} is not in the dataset's cutoff set")


class EstimationError(RdextrapError):
    """Estimation could not be carried out on the given data."""


class InsufficientData(EstimationError):
    pass


class NonpositiveBandwidth(EstimationError):
    pass


class SingularDesign(EstimationError):
    pass


class MismatchedViews(EstimationError):
    pass


class XbarOutOfRange(EstimationError):
    pass


class WeakFirstStage(EstimationError):
    pass


class UnsupportedOrder(EstimationError):
    pass


class EmptyCell(EstimationError):
    def __init__(self, cell):
        self.cell = cell
        super().__init__(f"no usable observations in cell {cell!r}")


class SupportViolation(EstimationError):
    def __init__(self, cell, propensity):
        self.cell = cell
        self.propensity = propensity
        super().__init__(
            f"cell {cell!r}: estimated low-cutoff propensity {propensity:.4f} "
            "outside [0.01, 0.99]"
        )


class DegenerateWeights(EstimationError):
    pass


class OverlappingWindows(EstimationError):
    pass


class ZeroVariance(EstimationError):
    pass


class InvalidEta(EstimationError):
    pass


class EstimatorUnknown(EstimationError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown estimator {name!r}")


class IndexOutOfRange(EstimationError):
    pass
