"""Exception hierarchy.

Data errors (bad input files, degenerate arms) and configuration errors are
kept apart so the command line can map them to distinct exit codes.
"""


class HTECellsError(Exception):
    """Base class for all package errors."""


class DataError(HTECellsError):
    """Problem with the input data."""


class ConfigError(HTECellsError):
    """Invalid run configuration."""


class MissingColumn(DataError):
    pass


class NonBinaryValue(DataError):
    def __init__(self, column, row, value):
        self.column = column
        self.row = row
        self.value = value
        super().__init__(f"non-binary value {value!r} in column {column!r} at row {row}")


class EmptyArm(DataError):
    pass


class StratumTooSmall(DataError):
    pass


class MissingTime(DataError):
    pass


class DegenerateDesign(DataError):
    pass


class ShapeMismatch(HTECellsError, ValueError):
    pass


class DegenerateLearner(HTECellsError):
    pass


class EmptySubgroupArm(HTECellsError):
    pass


class BlockTooSmall(HTECellsError):
    pass


class AllBinsMissing(HTECellsError):
    pass


class DegenerateBaseline(HTECellsError):
    pass


class MissingBins(HTECellsError):
    pass


class EmptyScreen(HTECellsError):
    pass


class InvalidRisk(ConfigError):
    pass
