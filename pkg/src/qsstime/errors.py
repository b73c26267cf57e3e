"""Exception types shared across the package."""


class QsstimeError(Exception):
    """Base class for all package-specific errors."""


class SingularEvaluationError(QsstimeError, ValueError):
    """Potential evaluated at a singular point (zero separation, no softening)."""


class ExtrapolationError(QsstimeError, ValueError):
    """Position outside the interpolation domain of a mean-field potential."""


class GridMismatchError(QsstimeError, ValueError):
    """Two objects built on different mu-space grids were combined."""


class OutOfGridError(QsstimeError, ValueError):
    """More than the allowed mass fraction fell outside the histogram grid."""


class DegenerateFitError(QsstimeError, ValueError):
    """Fit input carries no usable signal (e.g. all-zero table)."""


class ConstraintInfeasibleError(QsstimeError, ValueError):
    """Constrained step fit has no feasible amplitude assignment."""


class ZeroAcceptanceError(QsstimeError, RuntimeError):
    """Rejection sampler found an empty acceptance region."""


class IntegrationError(QsstimeError, RuntimeError):
    """Time integration aborted (non-finite state detected).

    Carries whatever diagnostics were accumulated before the abort in
    ``partial_log`` and ``partial_snapshots``.
    """

    def __init__(self, message, partial_log=None, partial_snapshots=None):
        super().__init__(message)
        self.partial_log = partial_log
        self.partial_snapshots = partial_snapshots if partial_snapshots is not None else []


class ConfigError(QsstimeError, ValueError):
    """Invalid or unreadable experiment configuration."""


class MissingArtifactError(QsstimeError, FileNotFoundError):
    """A required run artifact is absent."""
