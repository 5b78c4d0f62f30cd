class ComoError(Exception):
    """Base class for every error raised by the interaction/fusion library."""
    pass

class DimensionError(ComoError, ValueError):
    """Exception raised when tensor shapes or channel counts do not line up."""
    pass

class GeometryError(ComoError, ValueError):
    """Exception raised for invalid spatial geometry (sizes, windows, plans, pyramids)."""
    pass

class ParameterError(ComoError, ValueError):
    """Exception raised for out-of-range scalar parameters."""
    pass

class AnnotationValidationError(ComoError, ValueError):
    """Exception raised for a malformed annotation record."""

    def __init__(self, message: str, index: int):
        super().__init__(f"record {index}: {message}")
        self.index = index

class AnnotationParseError(ComoError):
    """Exception raised when a line of an annotation file cannot be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line

class ConfigError(ComoError):
    """Exception raised for an invalid run configuration."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
