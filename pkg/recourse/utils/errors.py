"""
Equal Recourse - Error Hierarchy
Typed failures raised by library code; the CLI maps them to exit codes
"""

from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class RecourseError(Exception):
    """Base class for every failure the package raises on purpose"""

    exit_code = EXIT_NUMERIC


class ContractViolation(RecourseError, ValueError):
    """Caller broke a precondition (dimension mismatch, bad argument)"""

    exit_code = EXIT_USAGE


class UsageError(RecourseError):
    """Bad command line or configuration"""

    exit_code = EXIT_USAGE


# DATA ERRORS
class DataError(RecourseError):
    """Dataset content violates an invariant (empty group, too few rows)"""

    exit_code = EXIT_DATA


class SchemaError(DataError):
    """Required column missing from an input file"""


class CsvParseError(DataError):
    """Feature cell could not be parsed as a number"""


# NUMERIC / TRAINING ERRORS
class NumericError(RecourseError):
    """Optimization or linear algebra failure"""

    exit_code = EXIT_NUMERIC


class InfeasibleProblemError(NumericError):
    """Box and equality constraints admit no feasible point"""


class ConditioningError(NumericError):
    """Quadratic term is not positive semi-definite within tolerance"""


class DegenerateModelError(NumericError):
    """Trained dual gives an all-zero weight vector"""


class TrainingError(NumericError):
    """QP failure inside the iterative training loop"""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class DegenerateFitError(NumericError):
    """Black-box fit impossible (single class, zero weights)"""


class DegenerateNeighborhoodError(NumericError):
    """Neighborhood labelled with a single class"""


class DegenerateSurrogateError(NumericError):
    """Local surrogate has zero coefficient norm"""


class FlipsetUnavailableError(NumericError):
    """No positively classified reference point exists"""


class EqualizationError(NumericError):
    """Re-weighting pipeline failed at a named stage"""

    def __init__(self, message: str, stage: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class CrossValidationError(NumericError):
    """Every grid point failed during cross-validation"""


class ExperimentError(NumericError):
    """Too many experiment runs failed"""

    def __init__(self, message: str, failed: Optional[int] = None, total: Optional[int] = None):
        super().__init__(message)
        self.failed = failed
        self.total = total
