"""Shared exception types."""


class ConfigurationError(ValueError):
    """A configuration value violates a precondition."""


class InstabilityError(RuntimeError):
    """The explicit transport update violated its CFL stability bound."""

    def __init__(self, step: int, courant: float):
        self.step = step
        self.courant = courant
        super().__init__(
            f"Courant number {courant:.6g} > 1 at step {step}; reduce dt or dx"
        )
