class ExtractorError(Exception):
    """Base class for extractor failures."""


class ValidationError(ExtractorError):
    """Bad job configuration or malformed input."""


class BackendUnavailableError(ExtractorError):
    """A model backend cannot be loaded in this environment."""
