"""Exception hierarchy for the depcag package."""


class DepcagError(Exception):
    """Base class for all package-specific errors."""


class OutOfWindow(DepcagError):
    """A time argument falls outside the stored mesh window."""


class MeshError(DepcagError):
    """Invalid mesh data (non-monotone knots, anchor outside interval, ...)."""


class IntegrationFailure(DepcagError):
    """An adaptive integrator could not meet the requested tolerance."""


class SingularFactor(DepcagError):
    """A required matrix inverse is singular or too ill-conditioned."""


class MissingProjection(DepcagError):
    """A projection matrix is required but was not supplied."""


class InsufficientData(DepcagError):
    """Not enough samples for the requested estimate."""


class NoContraction(DepcagError):
    """A fixed-point precondition (contraction constant < 1) fails."""


class MaxIterExceeded(DepcagError):
    """A fixed-point iteration did not converge within the iteration budget."""


class AnchorSolveFailure(DepcagError):
    """The per-interval anchor-value solve of the oracle did not converge."""


class NoDecayCertificate(DepcagError):
    """A decay estimate (c, sigma) with sigma > 0 is required but unavailable."""


class NoDichotomy(DepcagError):
    """A dichotomy certificate is required but unavailable."""


class TailNotConvergent(DepcagError):
    """A truncated series tail bound exceeds the requested tolerance."""


class ThetaNotLessThanOne(DepcagError):
    """The Gronwall smallness parameter theta is >= 1."""


class XiNotInRange(DepcagError):
    """An initial value must lie in the range of the projection but does not."""


class DomainError(DepcagError):
    """Arguments outside the domain of a closed-form expression."""


class ConfigError(DepcagError):
    """Invalid run configuration."""
