"""Exception types shared across the pipeline."""


class VividForgeError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VividForgeError):
    """Array dimensions violate a shape contract."""


class FormatError(VividForgeError):
    """A file or byte stream is not in the expected format."""


class IoError(VividForgeError):
    """Reading or writing a file failed."""


class ValidationError(VividForgeError):
    """An argument or value is outside its documented domain."""


class DivergenceError(VividForgeError):
    """Training produced a non-finite loss."""


class EmptyFaceError(VividForgeError):
    """No face pixels available where a face region is required."""


class ParseError(VividForgeError):
    """An assessment response does not follow the mandated report format."""


class EndpointError(VividForgeError):
    """The assessment endpoint stayed unreachable after all retries."""


class EmptyResponseError(VividForgeError):
    """The assessment endpoint returned an empty completion."""
