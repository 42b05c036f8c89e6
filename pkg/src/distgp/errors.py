"""Exception hierarchy shared by every module in the package."""

import numpy as np


class DistGPError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DistGPError, ValueError):
    pass


class NonPositiveDefinite(DistGPError, np.linalg.LinAlgError):
    """Raised when a matrix cannot be factorized even after jitter escalation."""


class UnsupportedParam(DistGPError, ValueError):
    pass


class OverflowGuard(DistGPError, ValueError):
    """Raised when a requested grid would exceed the point budget."""


class IndexOutOfRange(DistGPError, ValueError):
    pass


class TooManyExperts(DistGPError, ValueError):
    pass


class TooFewExperts(DistGPError, ValueError):
    pass


class DegeneratePrecision(DistGPError, ArithmeticError):
    pass


class DivergedError(DistGPError, ArithmeticError):
    """A trained parameter became non-finite."""


class VarianceClampError(DistGPError, ArithmeticError):
    """Too many predicted variances were negative before clamping."""


class NonFiniteMetric(DistGPError, ArithmeticError):
    pass


class ParseError(DistGPError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        where = f" ({', '.join(loc)})" if loc else ""
        super().__init__(f"{message}{where}")
        self.row = row
        self.column = column


class EmptyDataset(DistGPError, ValueError):
    pass


class ConfigError(DistGPError, ValueError):
    pass
