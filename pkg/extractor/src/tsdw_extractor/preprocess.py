"""The three region transforms feeding the stream backbones.

Face: crop to the face bounding box with non-face pixels blacked out; if
the face area is at or below the threshold the result is the 1x1 black
absent marker. Head-limb: keep head (face, hair) and limbs (arms, legs,
feet/shoes), fill everything else with white; the two fill colors are
deliberate and differ between the transforms. Global: the image as is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError
from .parsing import HEAD_LIMB_PARTS, PART_LABELS, ParsingMask

ABSENT_MARKER_SHAPE = (1, 1, 3)


@dataclass(frozen=True)
class RegionImages:
    face: np.ndarray        # (h, w, 3) crop or the 1x1 black absent marker
    head_limb: np.ndarray   # (H, W, 3) white-filled
    global_image: np.ndarray  # (H, W, 3) untouched

    @property
    def face_present(self) -> bool:
        return self.face.shape != ABSENT_MARKER_SHAPE or bool(self.face.any())


def absent_face_marker() -> np.ndarray:
    return np.zeros(ABSENT_MARKER_SHAPE, dtype=np.uint8)


def preprocess(image: np.ndarray, mask: ParsingMask, theta_face: float = 0.005) -> RegionImages:
    """Apply the three transforms; theta_face is a fraction of image area."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{mask.image_id}: expected an (H, W, 3) image")
    if mask.labels.shape != img.shape[:2]:
        raise AlignmentError(
            f"{mask.image_id}: mask {mask.labels.shape} does not align with "
            f"image {img.shape[:2]}")

    face_sel = mask.labels == PART_LABELS["face"]
    if mask.area_fraction("face") > theta_face:
        rows = np.flatnonzero(face_sel.any(axis=1))
        cols = np.flatnonzero(face_sel.any(axis=0))
        crop = img[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].copy()
        crop[~face_sel[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]] = 0
        face = crop
    else:
        face = absent_face_marker()

    keep = np.isin(mask.labels, [PART_LABELS[p] for p in HEAD_LIMB_PARTS])
    head_limb = np.full_like(img, 255)
    head_limb[keep] = img[keep]

    return RegionImages(face=face, head_limb=head_limb, global_image=img.copy())
