"""Exporter error types."""


class ExporterError(Exception):
    """Base class for exporter failures."""


class ModelError(ExporterError):
    """A model identifier could not be resolved or loaded."""


class InputError(ExporterError):
    """An input file is missing or malformed."""
