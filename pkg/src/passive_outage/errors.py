"""Exception types raised across the pipeline."""


class OutageError(Exception):
    """Base class for all package errors."""


class ConfigError(OutageError, ValueError):
    """Invalid or inconsistent configuration (also: missing darknet fields, empty keys)."""


class FormatError(OutageError, ValueError):
    """Input could not be interpreted in the declared format."""


class ModelError(OutageError, ValueError):
    """An address model cannot be used for the requested operation."""


class StructuralError(OutageError, ValueError):
    """Timelines or windows do not line up the way an operation requires."""


class StaleModelError(ConfigError):
    """Cached models are too old (or too new) for the detection window."""
