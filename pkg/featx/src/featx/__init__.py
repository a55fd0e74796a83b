"""Feature extraction adapter: images in, HCVF feature stores out."""

from featx.backbone import Backbone, BackboneError, load_backbone
from featx.extract import ExtractionError, ExtractionResult, extract
from featx.manifest import (
    ExtractionManifest,
    ManifestError,
    ManifestRow,
    load_manifest,
)

__all__ = [
    "Backbone",
    "BackboneError",
    "ExtractionError",
    "ExtractionManifest",
    "ExtractionResult",
    "ManifestError",
    "ManifestRow",
    "extract",
    "load_backbone",
    "load_manifest",
]
