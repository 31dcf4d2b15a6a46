"""Writer (and check-reader) for the TSDW embedding interchange format.

This package talks to the retrieval engine only through this file
format, so the layout is implemented here against its specification:
magic "TSDW", version u32 LE (=1), record count u32 LE, the three stream
widths u32 LE; then per record a u16 LE length-prefixed UTF-8 image id,
person u32 LE, camera u16 LE, clothes u32 LE, and D_f + D_l + D_g
float32 LE values. An absent face is D_f zero floats.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"TSDW"
VERSION = 1

_HEADER = struct.Struct("<4sIIIII")
_LABELS = struct.Struct("<IHI")


@dataclass(frozen=True)
class ExportRecord:
    image_id: str
    person_id: int
    camera_id: int
    clothes_id: int
    face: np.ndarray
    head_limb: np.ndarray
    global_feat: np.ndarray


def write_embeddings(records: list[ExportRecord], dims: tuple[int, int, int], path) -> None:
    df, dl, dg = dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(records), df, dl, dg))
        for rec in records:
            raw_id = rec.image_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_id)))
            fh.write(raw_id)
            fh.write(_LABELS.pack(rec.person_id, rec.camera_id, rec.clothes_id))
            for vec, dim in ((rec.face, df), (rec.head_limb, dl), (rec.global_feat, dg)):
                arr = np.ascontiguousarray(vec, dtype="<f4")
                if arr.shape != (dim,):
                    raise ValueError(f"{rec.image_id}: vector shape {arr.shape} != ({dim},)")
                fh.write(arr.tobytes())


def read_embeddings(path) -> tuple[list[ExportRecord], tuple[int, int, int]]:
    """Parse-back used by round-trip tests; the retrieval engine is the
    authoritative consumer."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, version, count, df, dl, dg = _HEADER.unpack_from(data, 0)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"{path}: not a TSDW v{VERSION} file")
    offset = _HEADER.size
    records = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        image_id = data[offset:offset + id_len].decode("utf-8")
        offset += id_len
        person, camera, clothes = _LABELS.unpack_from(data, offset)
        offset += _LABELS.size
        vecs = []
        for dim in (df, dl, dg):
            vecs.append(np.frombuffer(data[offset:offset + 4 * dim], dtype="<f4").copy())
            offset += 4 * dim
        records.append(ExportRecord(image_id, person, camera, clothes, *vecs))
    return records, (df, dl, dg)
