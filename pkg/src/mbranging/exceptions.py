"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class SingularityError(InvalidArgumentError):
    """A formula is evaluated at a singular point (e.g. zero range)."""


class UndefinedPhaseError(ValueError):
    """A phase was requested for a zero-magnitude sample."""


class UndefinedPSLRError(ValueError):
    """No sidelobe samples remain outside the main-lobe region."""


class NoCandidateError(RuntimeError):
    """The SPBP subset search has no feasible candidate."""
