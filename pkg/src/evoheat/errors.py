"""Exception types shared across the package."""


class TimeOutOfRange(ValueError):
    """Time outside [0, T) for the model at hand."""


class ChartError(ValueError):
    """Coordinates outside the valid chart range (e.g. too close to a sphere pole)."""


class StepTooLarge(ValueError):
    """Requested integrator step exceeds the configured maximum."""


class SingularMetric(RuntimeError):
    """Metric degenerate at a requested evaluation point/time."""


class HypothesisViolation(RuntimeError):
    """A theorem hypothesis (bounded kappa, rho bounded below, ...) fails on the model."""


class ConfigError(ValueError):
    """Invalid experiment configuration (unknown keys, bad values)."""
