"""Exception hierarchy.

Validation failures (bad coefficients, parameters that cannot make the
generator positive type) derive from :class:`ValidationError`; failures of
the numerics proper (solvers, censored simulations) derive from
:class:`NumericalError`. The CLI maps them to exit codes 2 and 3.
"""


class DivJumpError(Exception):
    pass


class ValidationError(DivJumpError, ValueError):
    pass


class NumericalError(DivJumpError, RuntimeError):
    pass


class NotSymmetricError(ValidationError):
    pass


class NonPositiveBracket(ValidationError):
    """A coordinate-direction bracket is not strictly positive."""

    def __init__(self, axis, value, knot=None):
        self.axis = axis
        self.value = value
        self.knot = knot
        where = "" if knot is None else f" at knot {tuple(knot)}"
        super().__init__(f"non-positive bracket {value:.6g} on axis {axis}{where}")


class NoParameters(ValidationError):
    """No integer parameter vector up to ``r_max`` gives a positive bracket."""

    def __init__(self, cell_id, best_omega, r_max):
        self.cell_id = cell_id
        self.best_omega = best_omega
        self.r_max = r_max
        super().__init__(
            f"cell {cell_id}: no r in 1..{r_max} with omega > 0 "
            f"(best {best_omega:.6g}); refine the partition"
        )


class PositiveTypeViolation(ValidationError):
    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class NotAGenerator(ValidationError):
    pass


class SolverError(NumericalError):
    pass


class CensoredError(NumericalError):
    pass
