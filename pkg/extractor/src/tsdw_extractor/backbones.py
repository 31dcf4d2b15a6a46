"""Pluggable image-to-vector backbones.

The contract is minimal: a callable mapping an (H, W, 3) uint8 image to
a fixed-width 1-D float32 vector. The hash-based stub is deterministic
down to the byte, which is what the export tests pin; real deployments
load a trained network through the same plug.
"""

from __future__ import annotations

import hashlib
import importlib.util
from pathlib import Path

import numpy as np


class StubBackbone:
    """Deterministic features seeded from the image bytes."""

    def __init__(self, dim: int = 16, salt: str = ""):
        if dim < 1:
            raise ValueError("backbone dim must be positive")
        self.dim = dim
        self.salt = salt

    def __call__(self, image: np.ndarray) -> np.ndarray:
        img = np.ascontiguousarray(image, dtype=np.uint8)
        digest = hashlib.sha256(
            self.salt.encode() + img.shape.__repr__().encode() + img.tobytes()
        ).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        vec = rng.normal(size=self.dim)
        norm = np.linalg.norm(vec)
        if norm < 1e-12:  # astronomically unlikely; keep the stream non-absent
            vec = np.ones(self.dim)
            norm = np.sqrt(self.dim)
        return (vec / norm).astype(np.float32)


def load_backbone(spec: str):
    """Resolve "stub", "stub:<dim>", or a Python file exporting build_backbone()."""
    if spec == "stub":
        return StubBackbone()
    if spec.startswith("stub:"):
        return StubBackbone(dim=int(spec.split(":", 1)[1]))
    path = Path(spec)
    module_spec = importlib.util.spec_from_file_location("user_backbone", path)
    if module_spec is None or module_spec.loader is None:
        raise ValueError(f"cannot load backbone from {spec!r}")
    module = importlib.util.module_from_spec(module_spec)
    module_spec.loader.exec_module(module)
    return module.build_backbone()
