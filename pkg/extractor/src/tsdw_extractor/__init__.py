"""Image on-ramp for the tri-stream retrieval engine.

Parses body regions, applies the face / head-limb / global transforms,
runs pluggable backbones and writes the TSDW embedding interchange
format consumed by the retrieval side.
"""

from .backbones import StubBackbone, load_backbone
from .errors import AlignmentError, DimensionError
from .extract import ExtractItem, extract
from .parsing import HEAD_LIMB_PARTS, PART_LABELS, ParsingMask, load_parser, stub_parser
from .preprocess import RegionImages, absent_face_marker, preprocess
from .writer import ExportRecord, read_embeddings, write_embeddings

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "DimensionError",
    "ExportRecord",
    "ExtractItem",
    "HEAD_LIMB_PARTS",
    "PART_LABELS",
    "ParsingMask",
    "RegionImages",
    "StubBackbone",
    "absent_face_marker",
    "extract",
    "load_backbone",
    "load_parser",
    "preprocess",
    "read_embeddings",
    "stub_parser",
    "write_embeddings",
]
