class ExporterError(Exception):
    """Base class for exporter failures."""


class ModelLoadError(ExporterError):
    """The requested encoder backend could not be constructed."""


class ImageDecodeError(ExporterError):
    """An image file could not be opened or decoded."""

    def __init__(self, path):
        super().__init__(f"cannot decode image: {path}")
        self.path = str(path)


class ManifestError(ExporterError):
    """The export manifest is missing or malformed."""
