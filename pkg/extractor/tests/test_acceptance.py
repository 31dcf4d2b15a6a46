"""Cross-component acceptance: files written here load in the retrieval engine.

Run with ``pytest tests/test_acceptance.py -v -s``. The retrieval engine
is exercised both through its Python loader and its command line.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from tsdw_extractor.backbones import StubBackbone
from tsdw_extractor.extract import ExtractItem, extract
from tsdw_extractor.parsing import PART_LABELS, ParsingMask, stub_parser
from tsdw_extractor.preprocess import preprocess

tsdw = pytest.importorskip("tsdw", reason="retrieval engine not installed")


def make_items(n=12, seed=0):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        image = rng.integers(0, 255, size=(48, 24, 3), dtype=np.uint8)
        items.append(ExtractItem(image_id=f"p{i % 4:04d}_c{i % 2:03d}_cam{i % 3}_{i}",
                                 image=image, person_id=i % 4, camera_id=i % 3,
                                 clothes_id=i % 2))
    return items


def half_faceless_parser(image, image_id):
    """Stub layout, but every other image loses its face region."""
    mask = stub_parser(image, image_id)
    tail = int(image_id.rsplit("_", 1)[1])
    if tail % 2 == 1:
        labels = mask.labels.copy()
        labels[labels == PART_LABELS["face"]] = PART_LABELS["background"]
        mask = ParsingMask(labels=labels, image_id=image_id)
    return mask


def test_c11_extractor_contract(tmp_path):
    """Stub-backbone exports load, round-trip and honor zero-face semantics."""
    items = make_items()
    out = tmp_path / "export.tsdw"
    count = extract(items, half_faceless_parser,
                    StubBackbone(8, salt="f"), StubBackbone(8, salt="l"),
                    StubBackbone(8, salt="g"), 0.005, out)
    assert count == len(items)

    # loads and validates in the retrieval engine
    eset = tsdw.load_embeddings(out)
    assert len(eset) == len(items)
    assert eset.dims == (8, 8, 8)
    for i, rec in enumerate(eset.records):
        expected_absent = i % 2 == 1
        assert rec.face_present == (not expected_absent)
        if expected_absent:
            assert np.all(rec.face == 0.0)

    # round-trips bit-exactly through the engine's writer
    back = tmp_path / "roundtrip.tsdw"
    tsdw.save_embeddings(eset, back)
    assert back.read_bytes() == out.read_bytes()

    # the engine's command line agrees on the inventory
    proc = subprocess.run([sys.executable, "-m", "tsdw.cli", "inspect", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    info = json.loads(proc.stdout)
    assert info["records"] == len(items)
    assert info["face_absent"] == len(items) // 2

    # threshold monotonicity across a sweep, on the real stub layout
    rng = np.random.default_rng(7)
    image = rng.integers(0, 255, size=(48, 24, 3), dtype=np.uint8)
    mask = stub_parser(image, "sweep")
    presence = [preprocess(image, mask, t).face_present
                for t in (0.0, 0.005, 0.02, 0.05, 0.1, 0.5, 1.0)]
    assert all(a >= b for a, b in zip(presence, presence[1:]))
    assert presence[0] and not presence[-1]

    print("\n[acceptance] criterion 11: PASS - exports load/round-trip in the "
          "retrieval engine, zero-face semantics hold, threshold sweep monotone")
