"""Exception types shared across the package."""


class StableSdeError(Exception):
    """Base class for all package-specific errors."""


class AbortNonFinite(StableSdeError):
    """Raised when NaN/inf shows up where the optimizer cannot proceed."""


class EmptyChannel(StableSdeError):
    """A channel with zero observed entries cannot be filled."""


class TooFewKnots(StableSdeError):
    """A controlled path needs at least two time points."""


class NegativeStateGSDE(StableSdeError):
    """The geometric SDE drift is only defined for componentwise nonnegative states."""


class NumericalExplosion(StableSdeError):
    """State norm crossed the explosion threshold (or went non-finite) mid-solve."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"state exploded at solver step {step}")
