"""Exception types shared across the package."""


class ModelInvalidError(Exception):
    """The environment model violates a structural requirement.

    Raised for reducible or periodic kernels, non-ballistic models handed
    to operations that require ballisticity, ellipticity violations, and
    identifiability violations at preset construction.
    """


class WalkTimeoutError(Exception):
    """The walk exhausted its step budget before hitting the target site.

    Carries the partial trajectory simulated so far in ``trajectory``.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class FilterDegeneracyError(Exception):
    """A prediction-filter update produced a zero normalizing constant."""
