"""Exception taxonomy shared across the package."""


class RbcvError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(RbcvError, ValueError):
    """Invalid distribution / family / experiment configuration."""


class DomainError(RbcvError, ValueError):
    """Numeric input outside an operation's domain (empty row, length
    mismatch, parameter outside the declared interval, ...)."""


class NumericalError(RbcvError, RuntimeError):
    """A numeric contract was violated (solver residual too large,
    variance below the negative-clamp tolerance, non-finite values)."""


class DegenerateCoefficientError(RbcvError, RuntimeError):
    """Diffusion tensor at or below the ellipticity floor."""

    def __init__(self, mu, z, location, value):
        self.mu, self.z, self.location, self.value = mu, z, location, value
        super().__init__(
            f"diffusion tensor degenerate: min entry {value:.3e} at "
            f"{location} for mu={mu}, z={z}"
        )


class DegenerateBasisError(RbcvError, RuntimeError):
    """Basis Gram matrix numerically singular on the given batch."""


class DegenerateSnapshotError(RbcvError, RuntimeError):
    """New snapshot is (numerically) already in the span of the basis."""


class DegenerateSelectionError(RbcvError, RuntimeError):
    """Every trial parameter has (numerically) zero residual: the trial
    set is exhausted and greedy selection carries no information."""


class UndefinedQuantityError(RbcvError, RuntimeError):
    """Requested diagnostic is undefined (near-zero reference mean in a
    relative error, or zero denominator in an acceptance ratio)."""
