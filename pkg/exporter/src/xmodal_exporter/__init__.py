"""Offline teacher-embedding exporter for the xmodal engine."""

from .backends import ClipEncoder, ToyEncoder, load_encoder
from .errors import ExporterError, ImageDecodeError, ManifestError, ModelLoadError
from .export import ExportReport, export_bundle
from .manifest import ExportManifest, read_manifest
from .writer import write_bundle

__version__ = "0.1.0"
