"""Image folders to CSEB embedding tables with a frozen vision backbone."""

from .backbones import BACKBONES, backbone_dim, build_backbone
from .errors import BackboneError, ExtractError, ImageDecodeError, ManifestError
from .extract import extract, load_image, write_cseb
from .manifest import read_manifest

__all__ = [
    "BACKBONES",
    "BackboneError",
    "ExtractError",
    "ImageDecodeError",
    "ManifestError",
    "backbone_dim",
    "build_backbone",
    "extract",
    "load_image",
    "read_manifest",
    "write_cseb",
]
