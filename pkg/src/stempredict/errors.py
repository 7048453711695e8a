"""Exception types raised across the package."""

import numpy as np


class StemError(Exception):
    """Base class for all package errors."""


class InvalidArgument(StemError, ValueError):
    pass


class NotPositiveDefinite(StemError, np.linalg.LinAlgError):
    """Raised when a covariance cannot be factorized even after jitter."""


class DegenerateInput(StemError, ValueError):
    """Raised where a formula is undefined, e.g. a derivative at zero lag."""


class SingularSystem(StemError, np.linalg.LinAlgError):
    pass
