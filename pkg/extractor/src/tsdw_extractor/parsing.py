"""Per-pixel body-part labels and a deterministic stand-in parser.

A real deployment plugs in a pretrained human parser; the stub here
paints a plausible person layout from the image geometry alone so the
pipeline can run and be tested without model weights.
"""

from __future__ import annotations

import importlib.util
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError

PART_LABELS = {
    "background": 0,
    "face": 1,
    "hair": 2,
    "arms": 3,
    "legs": 4,
    "feet_shoes": 5,
    "clothing": 6,
}

# regions retained by the head-limb transform: head (face and hair) plus
# arms, legs and feet/shoes; shoes stay because they carry identity cues
HEAD_LIMB_PARTS = ("face", "hair", "arms", "legs", "feet_shoes")


@dataclass(frozen=True)
class ParsingMask:
    labels: np.ndarray  # (H, W) uint8 part codes
    image_id: str

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise AlignmentError(f"{self.image_id}: mask must be 2-D")
        if self.labels.max(initial=0) >= len(PART_LABELS):
            raise AlignmentError(f"{self.image_id}: unknown part code in mask")

    def area_fraction(self, part: str) -> float:
        code = PART_LABELS[part]
        return float((self.labels == code).mean()) if self.labels.size else 0.0


def stub_parser(image: np.ndarray, image_id: str) -> ParsingMask:
    """Geometric person layout: hair over face, torso clothing, limb bands."""
    h, w = image.shape[:2]
    labels = np.zeros((h, w), dtype=np.uint8)
    cx = w // 2
    half = max(1, w // 6)

    def band(top: float, bottom: float):
        return slice(int(h * top), max(int(h * top) + 1, int(h * bottom)))

    labels[band(0.00, 0.06), cx - half:cx + half] = PART_LABELS["hair"]
    labels[band(0.06, 0.18), cx - half:cx + half] = PART_LABELS["face"]
    labels[band(0.18, 0.55), cx - 2 * half:cx + 2 * half] = PART_LABELS["clothing"]
    labels[band(0.22, 0.50), cx - 3 * half:cx - 2 * half] = PART_LABELS["arms"]
    labels[band(0.22, 0.50), cx + 2 * half:cx + 3 * half] = PART_LABELS["arms"]
    labels[band(0.55, 0.92), cx - 2 * half:cx + 2 * half] = PART_LABELS["legs"]
    labels[band(0.92, 1.00), cx - 2 * half:cx + 2 * half] = PART_LABELS["feet_shoes"]
    return ParsingMask(labels=labels, image_id=image_id)


def load_parser(spec: str):
    """Resolve a parser: "stub" or a Python file exporting build_parser()."""
    if spec == "stub":
        return stub_parser
    path = Path(spec)
    module_spec = importlib.util.spec_from_file_location("user_parser", path)
    if module_spec is None or module_spec.loader is None:
        raise ValueError(f"cannot load parser from {spec!r}")
    module = importlib.util.module_from_spec(module_spec)
    module_spec.loader.exec_module(module)
    return module.build_parser()
