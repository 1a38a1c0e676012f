"""Exceptions shared across the solver stack."""


class TimeDDError(Exception):
    """Base class for all library errors."""


class SingularMatrixError(TimeDDError):
    """Direct factorization hit a (numerically) singular pivot."""


class ZeroPivotError(TimeDDError):
    """ILU(0) encountered a vanishing diagonal pivot."""

    def __init__(self, row):
        self.row = row
        super().__init__(f"zero pivot at row {row}")


class BreakdownError(TimeDDError):
    """Krylov recurrence broke down before convergence."""


class DimensionMismatchError(TimeDDError):
    """Operands have incompatible shapes."""


class InvalidGridError(TimeDDError):
    """Grid parameters outside the supported range."""


class IndivisibleGridError(TimeDDError):
    """Interior time steps cannot be split into K equal subdomains."""


class OverlapTooLargeError(TimeDDError):
    """Requested overlap exceeds the subdomain width."""


class CoarseSolveFailedError(TimeDDError):
    """Coarse-grid correction solve broke down."""


class SubdomainSolveFailedError(TimeDDError):
    """A local subdomain solve did not reach its tolerance."""

    def __init__(self, subdomain_id, detail=""):
        self.subdomain_id = subdomain_id
        msg = f"subdomain {subdomain_id} solve failed"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class MaxItersExceededError(TimeDDError):
    """Stationary iteration hit its iteration cap; carries the report."""

    def __init__(self, report, iterate):
        self.report = report
        self.iterate = iterate
        super().__init__(
            f"no convergence within {report.iterations} iterations "
            f"(relative residual {report.history[-1]:.3e})"
        )


class RequiresTwoSubdomainsError(TimeDDError):
    """Diagnostic only defined for the two-subdomain nonoverlapping split."""
