"""Exception hierarchy shared by the solver, simulator and oracle."""


class DrawdownError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(DrawdownError, ValueError):
    """Model parameters outside their admissible range."""


class DomainError(DrawdownError, ValueError):
    """Evaluation point outside the domain of a function."""


class RegimeError(DrawdownError):
    """Operation requested in a regime where it is undefined."""


class NoRoot(RegimeError):
    """The boundary free point y0 does not exist (simple regime)."""


class NonConvergence(DrawdownError):
    def __init__(self, iterations, last_delta, level=None):
        self.iterations = iterations
        self.last_delta = last_delta
        self.level = level
        where = "" if level is None else f" at level {level}"
        super().__init__(
            f"no convergence{where} after {iterations} iterations "
            f"(last sup-norm change {last_delta:.3e})"
        )


class ObstacleViolation(DrawdownError):
    def __init__(self, violation, level=None):
        self.violation = violation
        self.level = level
        where = "" if level is None else f" at level {level}"
        super().__init__(f"solution dips below the obstacle by {violation:.3e}{where}")


class NotFound(DrawdownError):
    """A free boundary could not be located on the grid."""


class ConfigError(DrawdownError, ValueError):
    """Invalid simulation or run configuration."""


class AdmissibilityError(DrawdownError, ValueError):
    """A strategy would violate b * M <= C <= cbar."""
