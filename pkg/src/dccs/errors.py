"""Exception types shared across the package."""


class RoiOutOfBounds(ValueError):
    """Requested rectangle does not lie fully inside the image grid."""


class ShapeMismatch(ValueError):
    """Operands do not share the required spatial/temporal shape."""


class SvdFailure(RuntimeError):
    """Singular value decomposition did not converge."""


class NonFiniteIterate(RuntimeError):
    """An iterative solve produced NaN or Inf values."""


class InvalidConfig(ValueError):
    """A configuration object violates its invariants."""


class ZeroReferenceFrame(ValueError):
    """A reference frame is identically zero inside the evaluation region."""


class EmptyMask(ValueError):
    """The evaluation mask selects no pixels."""


class FileFormatError(ValueError):
    """A DCCS binary file is malformed or has the wrong magic."""
