"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class DivergenceError(ValueError):
    """A series required by the operation does not converge for these parameters."""


class ConfigError(ValueError):
    """Invalid experiment or system configuration.

    ``diagnostics`` lists every violated condition, each naming the
    assumption it belongs to.
    """

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics) or [message]


class BlowUpError(RuntimeError):
    """A trajectory produced a non-finite state."""

    def __init__(self, step, time):
        super().__init__(f"non-finite state at step {step} (t={time:.6g})")
        self.step = step
        self.time = time


class ExperimentError(RuntimeError):
    """An ensemble experiment could not produce a trustworthy result."""
