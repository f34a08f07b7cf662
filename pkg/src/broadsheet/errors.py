"""Exception hierarchy shared across the package."""


class BroadsheetError(Exception):
    """Base class for all package-specific errors."""


class DegenerateBox(BroadsheetError):
    """A box operation produced (or would produce) a zero-area box."""


class PageMismatch(BroadsheetError):
    """Detection sets that must refer to the same page do not."""


class InsufficientSamples(BroadsheetError):
    """Too few geometry samples to fit a density model."""


class ImageTooSmall(BroadsheetError):
    """Image is smaller than an operation's minimum working size."""


class EngineError(BroadsheetError):
    """An OCR engine invocation failed."""


class EmptyCorpus(BroadsheetError):
    """Corpus discovery found no pages."""


class ConfigError(BroadsheetError):
    """A run configuration is invalid or references missing files."""
