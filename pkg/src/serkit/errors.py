"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(ToolkitError, ValueError):
    """An operation was called with out-of-contract arguments."""


class SchemaError(ToolkitError, ValueError):
    """Structured input (manifest, CSV, matrix shape) violates its schema."""


class FormatError(ToolkitError, ValueError):
    """A binary file is malformed: bad magic, truncation, or corrupt payload."""
