"""Exception hierarchy shared by all pipeline stages."""


class TyperetError(Exception):
    """Base class for all library errors."""


class ConstantImageError(TyperetError):
    pass


class WindowTooLargeError(TyperetError):
    pass


class ImageTooSmallError(TyperetError):
    pass


class DegenerateInputError(TyperetError):
    pass


class TooFewSamplesError(TyperetError):
    pass


class EmptyDescriptorSetError(TyperetError):
    pass


class DimensionMismatchError(TyperetError):
    pass


class NoTestImagesError(TyperetError):
    pass


class EmptyMatrixError(TyperetError):
    pass


class ImageTooSmallForPatchError(TyperetError):
    pass


class ValidationError(TyperetError):
    """Manifest or input validation failure (CLI exit code 2)."""


class DuplicateImageIdError(ValidationError):
    pass


class MissingFileError(ValidationError):
    pass


class StaleArtifactError(TyperetError):
    """Config hash recorded upstream disagrees with the current config (exit code 3)."""


class FormatError(TyperetError):
    """Malformed binary artifact."""


class NumericalError(TyperetError):
    """A solver failed its accuracy check (CLI exit code 4)."""
