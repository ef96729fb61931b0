"""Exception hierarchy shared across the pipeline.

``ValidationError`` subclasses signal bad input (CLI exit code 1);
everything else deriving from ``DriveFeedbackError`` is a runtime failure.
"""


class DriveFeedbackError(Exception):
    """Base class for all package errors."""


class ValidationError(DriveFeedbackError, ValueError):
    """Input failed a schema or contract check."""


class IngestError(ValidationError):
    """Sensor stream could not be read at all."""


class SchemaError(ValidationError):
    """Log header or record layout does not match the canonical schema."""
