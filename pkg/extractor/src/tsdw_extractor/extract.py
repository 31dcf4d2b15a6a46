"""End-to-end extraction: parse, transform regions, embed, export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .preprocess import preprocess
from .writer import ExportRecord, write_embeddings


@dataclass(frozen=True)
class ExtractItem:
    image_id: str
    image: np.ndarray
    person_id: int
    camera_id: int
    clothes_id: int


def extract(items, parser, backbone_face, backbone_limb, backbone_global,
            theta_face: float, out_path) -> int:
    """Run the pipeline over items and write one embedding file.

    Absent faces are stored as zero vectors of the face backbone's width
    (never passed through the backbone). Returns the record count.
    """
    records: list[ExportRecord] = []
    dims: tuple[int, int, int] | None = None
    for item in items:
        mask = parser(item.image, item.image_id)
        regions = preprocess(item.image, mask, theta_face)
        limb_vec = _run(backbone_limb, regions.head_limb, item.image_id, "head_limb")
        glob_vec = _run(backbone_global, regions.global_image, item.image_id, "global")
        # the face backbone sees the crop or the 1x1 absent marker; an
        # absent face is then forced to the zero vector of the same width
        face_raw = _run(backbone_face, regions.face, item.image_id, "face")
        face_vec = face_raw if regions.face_present else np.zeros_like(face_raw)
        rec_dims = (face_vec.shape[0], limb_vec.shape[0], glob_vec.shape[0])
        if dims is None:
            dims = rec_dims
        elif rec_dims != dims:
            raise DimensionError(
                f"{item.image_id}: backbone widths drifted from {dims} to {rec_dims}")
        records.append(ExportRecord(item.image_id, item.person_id, item.camera_id,
                                    item.clothes_id, face_vec, limb_vec, glob_vec))
    if dims is None:
        raise ValueError("no items to extract")
    write_embeddings(records, dims, out_path)
    return len(records)


def _run(backbone, image: np.ndarray, image_id: str, stream: str) -> np.ndarray:
    vec = np.asarray(backbone(image), dtype=np.float32)
    if vec.ndim != 1:
        raise DimensionError(f"{image_id}: {stream} backbone must emit a 1-D vector")
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{image_id}: {stream} backbone emitted non-finite values")
    if stream != "face" and float(np.linalg.norm(vec)) < 1e-8:
        raise ValueError(f"{image_id}: {stream} stream must never be a zero vector")
    return vec
