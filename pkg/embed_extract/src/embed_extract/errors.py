class ExtractError(Exception):
    """Base class for everything this package raises on purpose."""


class ManifestError(ExtractError):
    """Malformed manifest, duplicate ids, or paths that do not exist."""


class BackboneError(ExtractError):
    """Unknown backbone name or a feature shape that contradicts it."""


class ImageDecodeError(ExtractError):
    """An image file that cannot be opened or decoded."""
