"""Exception types raised across the package."""


class PhotosceneError(Exception):
    """Base class for all package errors."""


# bundle / file handling
class MissingAsset(PhotosceneError):
    pass


class DimensionMismatch(PhotosceneError):
    pass


class InvalidManifest(PhotosceneError):
    pass


class UnknownPart(PhotosceneError):
    pass


class UnknownView(PhotosceneError):
    pass


class IoFailure(PhotosceneError):
    pass


class MissingPredictions(PhotosceneError):
    pass


# autodiff
class ShapeMismatch(PhotosceneError, ValueError):
    pass


class NonFiniteInput(PhotosceneError, ValueError):
    pass


class SeedShapeMismatch(PhotosceneError, ValueError):
    pass


# material graphs
class ParamLengthMismatch(PhotosceneError, ValueError):
    pass


class UnsupportedResolution(PhotosceneError, ValueError):
    pass


# rendering / alignment / fitting
class GridMismatch(PhotosceneError, ValueError):
    pass


class EmptyMask(PhotosceneError, ValueError):
    pass


class PartNotVisible(PhotosceneError):
    pass


class NonFiniteLoss(PhotosceneError):
    """Raised when an optimization objective turns non-finite.

    ``state`` carries the parameters at the failing iterate for diagnosis.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class InvalidBounds(PhotosceneError, ValueError):
    pass


class DegenerateSystem(UserWarning):
    """Warning: a light source contributes nothing to the observed pixels."""
