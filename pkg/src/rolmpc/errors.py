"""Exception hierarchy shared by all modules."""


class RolmpcError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(RolmpcError, ValueError):
    pass


class EmptyResult(RolmpcError):
    """A set operation produced the empty set."""


class SolverFailure(RolmpcError):
    """A numerical backend did not return a usable solution."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class Infeasible(RolmpcError):
    pass


class DomainError(RolmpcError, ValueError):
    """A flat map was evaluated outside the region where it is defined."""


class RiccatiDivergence(RolmpcError):
    pass


class NotContractive(RolmpcError):
    pass


class SpecViolation(RolmpcError):
    """A trajectory handed to the safe set breaks one of the nominal-trajectory conditions.

    ``condition`` names the failed check ("error_in_tube", "state_in_tightened",
    "input_in_tightened", "nominal_dynamics", "bounding_in_tightened" or "goal").
    """

    def __init__(self, condition, message):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


class AssumptionViolated(RolmpcError):
    """Seed data cannot initialise the iterative scheme.

    ``which`` is "seed_support" (support SDP infeasible on seed data) or
    "seed_nominal" (seed nominal trajectory not admissible for the first safe set).
    """

    def __init__(self, which, message):
        super().__init__(f"{which}: {message}")
        self.which = which


class StepCapExceeded(RolmpcError):
    pass


class InfeasibleMpc(RolmpcError):
    pass
