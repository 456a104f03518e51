"""Exception hierarchy shared by the numerical modules and the CLI."""


class JacobiError(Exception):
    """Base class for every error raised by the library."""


class NonPositiveCoefficientError(JacobiError, ValueError):
    def __init__(self, n: int, value: float) -> None:
        self.n = n
        self.value = value
        super().__init__(f"a_{n} = {value!r} is not positive")


class NonEllipticError(JacobiError):
    """Raised when a transfer matrix has discriminant >= -delta_min."""

    def __init__(
        self, x: float | None = None, index: int | None = None, discr: float | None = None
    ) -> None:
        self.x = x
        self.index = index
        self.discr = discr
        subject = f"x = {x!r} is not in the elliptic region" if x is not None else "matrix is not elliptic"
        where = f" at index {index}" if index is not None else ""
        value = f" (discr = {discr:.3e})" if discr is not None else ""
        super().__init__(f"{subject}{where}{value}")


class DegenerateRefinement(JacobiError):
    def __init__(self, index: int, level: int | None = None, denominator: float | None = None) -> None:
        self.index = index
        self.level = level
        self.denominator = denominator
        at_level = f" at level {level}" if level is not None else ""
        super().__init__(
            f"refinement step degenerates{at_level}, index {index}: "
            f"|Im(w11 + gamma)| = {denominator!r}"
        )


class ScalingMismatchError(JacobiError):
    """Window entries cannot be combined on a common scale."""


class ZeroEigenvectorError(JacobiError, ValueError):
    """The pair (u_{n-1}, u_n) vanishes, so it is not a generalized eigenvector."""


class InsufficientSamplesError(JacobiError, ValueError):
    def __init__(self, available: int, required: int, what: str = "samples") -> None:
        self.available = available
        self.required = required
        super().__init__(f"need at least {required} {what}, got {available}")


class ZeroEntryError(JacobiError):
    def __init__(self, x: float, entry: float) -> None:
        self.x = x
        self.entry = entry
        super().__init__(f"limit matrix entry [2,1] = {entry!r} vanishes at x = {x!r}")


class FitDegenerate(JacobiError):
    """The sine-law design matrix is rank deficient."""


class QuadratureError(JacobiError):
    """The Simpson error estimate exceeds the requested tolerance."""


class UnsupportedFamilyError(JacobiError, ValueError):
    """The requested family has no closed-form limit object."""


class MajorityFailureError(JacobiError):
    def __init__(self, command: str, failed: int, total: int, reasons: dict[str, int]) -> None:
        self.command = command
        self.failed = failed
        self.total = total
        self.reasons = reasons
        super().__init__(f"{command}: {failed} of {total} grid points failed")
