"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates an operation's precondition."""


class DomainError(ValueError):
    """A point or matrix lies outside the region where an operation is defined."""


class ParameterError(ValueError):
    """Metric coefficients outside the model's admissible region."""


class ConfigurationError(ValueError):
    """A descriptor, scenario or structure list is incomplete or inconsistent."""


class ExtinctionError(RuntimeError):
    """The flow left the admissible region or hit the curvature safety margin.

    ``stop_time`` is the last time reached; ``critical_time`` extrapolates the
    vanishing coefficient linearly to zero. ``partial`` holds the trajectory
    computed before the stop (a :class:`~ricci_holonomy.flow.FlowState`).
    """

    def __init__(self, message, stop_time, critical_time, partial=None):
        super().__init__(message)
        self.stop_time = stop_time
        self.critical_time = critical_time
        self.partial = partial
