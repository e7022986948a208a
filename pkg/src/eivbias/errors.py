"""Exception hierarchy shared by the estimation modules."""


class EIVError(Exception):
    """Base class for all package errors."""


class DimensionError(EIVError, ValueError):
    """Array shapes do not agree with the model dimensions."""


class NonPDCovariance(EIVError):
    """A covariance matrix failed a symmetric positive-definite factorization.

    ``index`` is the offending observation (or ``None`` for a parameter block).
    """

    def __init__(self, index=None, what="Sigma_i"):
        self.index = index
        self.what = what
        where = "" if index is None else f" (observation {index})"
        super().__init__(f"{what} is not positive definite{where}")


class SingularInformation(EIVError):
    """Expected Fisher information is numerically singular."""


class DegenerateData(EIVError):
    """Data cannot support a fit (too few rows, singular covariate covariance)."""


class NonConvergence(EIVError):
    """Fisher scoring did not converge."""


class TooManyFailures(EIVError):
    """Too many Monte Carlo replications were discarded."""


class SizeGuard(EIVError):
    """Dense reference computation refused because the problem is too large."""


class ParseError(EIVError):
    """Malformed CSV input; carries the 1-based data row and column name."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        prefix = f"{', '.join(loc)}: " if loc else ""
        super().__init__(prefix + message)
