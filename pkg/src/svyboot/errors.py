"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 3, the two
estimation-diagnostic errors -> 4.  Everything else is a bug.
"""


class SvybootError(Exception):
    """Base class for errors raised by this package."""


class DataError(SvybootError):
    """Malformed input: CSV parse failures, invalid weights, bad shapes."""


class SingularInformationError(SvybootError):
    """Weighted information matrix is numerically singular (cond > 1e12)."""


class DiagnosticError(SvybootError):
    """A diagnostic threshold was crossed (e.g. too many dropped replicates)."""
