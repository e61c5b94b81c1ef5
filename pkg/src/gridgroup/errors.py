"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` (bad input, CLI
exit code 2) and :class:`NumericalError` (a computation could not be carried
out, CLI exit code 3).
"""


class GridGroupError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GridGroupError, ValueError):
    pass


class NumericalError(GridGroupError, ArithmeticError):
    pass


class DimensionError(ValidationError):
    """Matrix dimensions of two operands do not agree."""

    def __init__(self, first, second, detail=""):
        self.pair = (first, second)
        msg = f"dimension mismatch between {first} and {second}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NetworkFormatError(ValidationError):
    pass


class DisconnectsError(ValidationError):
    """Removing the requested line splits the network graph."""


class UnstableError(NumericalError):
    """A state matrix that must be Hurwitz is not.

    ``index`` identifies the offending plant when the error comes out of a
    multi-plant computation.
    """

    def __init__(self, msg="system is not Hurwitz", index=None):
        self.index = index
        super().__init__(msg)


class UnstableContingencyError(NumericalError):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(
            "nominal controller does not stabilize contingencies: "
            + ", ".join(str(i) for i in self.ids))


class InfiniteH2Error(NumericalError):
    pass


class SingularResolventError(NumericalError):
    def __init__(self, omega):
        self.omega = omega
        super().__init__(f"jwI - A is singular at omega={omega!r}")


class ConvergenceError(NumericalError):
    def __init__(self, msg, bracket=None):
        self.bracket = bracket
        super().__init__(msg if bracket is None else f"{msg} (bracket={bracket})")


class NoStabilizingStart(NumericalError):
    pass


class UnhandledContingency(GridGroupError, LookupError):
    """The failed line is not covered by the controller library.

    The nominal gain travels with the exception so that callers can fall
    back to it without another lookup.
    """

    def __init__(self, line_id, fallback):
        self.line_id = line_id
        self.fallback = fallback
        super().__init__(f"line {line_id!r} is not a modeled contingency; "
                         "falling back to the nominal controller")
