"""Tri-stream embedding records and their on-disk format.

Each record carries identity/camera/clothes labels plus three feature
vectors: face, head-limb and global. A face may be absent, in which case
it is stored as an all-zeros vector of full width and ``face_present`` is
derived from the data (norm below ``EPS_ZERO``), never trusted from the
file. Head-limb and global vectors are never absent.

File layout (all integers little-endian)::

    magic   4 bytes  b"TSDW"
    version u32      =1
    count   u32      number of records
    D_f     u32      face dim
    D_l     u32      head-limb dim
    D_g     u32      global dim
    per record:
        id_len  u16, then id_len bytes UTF-8 image id
        person  u32
        camera  u16
        clothes u32
        D_f + D_l + D_g float32 values (face, head-limb, global)

An absent face is written as D_f zero floats. Sets are immutable after
load and safe for concurrent readers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, FormatError
from .validation import EPS_ZERO, check_finite

MAGIC = b"TSDW"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIIII")
_REC_FIXED = struct.Struct("<IHI")  # person_id, camera_id, clothes_id


@dataclass(frozen=True)
class EmbeddingRecord:
    """One image's labels and its three stream vectors."""

    image_id: str
    person_id: int
    camera_id: int
    clothes_id: int
    face: np.ndarray
    head_limb: np.ndarray
    global_feat: np.ndarray

    @property
    def face_present(self) -> bool:
        return float(np.linalg.norm(self.face)) >= EPS_ZERO

    def dims(self) -> tuple[int, int, int]:
        return (self.face.shape[0], self.head_limb.shape[0], self.global_feat.shape[0])


@dataclass(frozen=True)
class EmbeddingSet:
    """An ordered, validated collection of records with shared dims."""

    records: tuple[EmbeddingRecord, ...]
    dims: tuple[int, int, int]
    role: str = "gallery"  # one of {"query", "gallery", "train"}

    def __post_init__(self):
        seen: set[str] = set()
        for idx, rec in enumerate(self.records):
            if rec.dims() != tuple(self.dims):
                raise DimensionError(
                    f"record {idx} ({rec.image_id!r}): dims {rec.dims()} != set dims {self.dims}"
                )
            if rec.image_id in seen:
                raise ValueError(f"duplicate image_id {rec.image_id!r}")
            seen.add(rec.image_id)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def person_ids(self) -> np.ndarray:
        return np.array([r.person_id for r in self.records], dtype=np.int64)

    @property
    def camera_ids(self) -> np.ndarray:
        return np.array([r.camera_id for r in self.records], dtype=np.int64)

    @property
    def clothes_ids(self) -> np.ndarray:
        return np.array([r.clothes_id for r in self.records], dtype=np.int64)

    @property
    def face_present(self) -> np.ndarray:
        return np.array([r.face_present for r in self.records], dtype=bool)

    def stream(self, name: str) -> np.ndarray:
        """Stack one stream into an (n, D) matrix. Names: face, head_limb, global."""
        attr = {"face": "face", "head_limb": "head_limb", "global": "global_feat"}[name]
        if not self.records:
            d = dict(zip(("face", "head_limb", "global"), self.dims))[name]
            return np.zeros((0, d))
        return np.stack([getattr(r, attr) for r in self.records])


def _validate_record(rec: EmbeddingRecord, idx: int) -> None:
    for name, vec in (("face", rec.face), ("head_limb", rec.head_limb), ("global", rec.global_feat)):
        if vec.ndim != 1:
            raise DimensionError(f"record {idx}: {name} is not a vector")
        check_finite(vec, f"record {idx}: {name}")
    for name, vec in (("head_limb", rec.head_limb), ("global", rec.global_feat)):
        if float(np.linalg.norm(vec)) < EPS_ZERO:
            raise ValueError(f"record {idx}: {name} stream has zero norm (never absent)")


def make_set(records, dims=None, role: str = "gallery") -> EmbeddingSet:
    """Validate records and build an immutable set."""
    records = tuple(records)
    for idx, rec in enumerate(records):
        _validate_record(rec, idx)
    if dims is None:
        if not records:
            raise DimensionError("cannot infer dims from an empty record list")
        dims = records[0].dims()
    return EmbeddingSet(records=records, dims=tuple(dims), role=role)


def save_embeddings(eset: EmbeddingSet, path) -> None:
    """Write a set in the binary format; round-trips bit-exactly for float32 data."""
    for idx, rec in enumerate(eset.records):
        _validate_record(rec, idx)
    df, dl, dg = eset.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(eset.records), df, dl, dg))
        for rec in eset.records:
            raw_id = rec.image_id.encode("utf-8")
            if len(raw_id) > 0xFFFF:
                raise ValueError(f"image_id too long: {rec.image_id[:32]!r}...")
            fh.write(struct.pack("<H", len(raw_id)))
            fh.write(raw_id)
            fh.write(_REC_FIXED.pack(rec.person_id, rec.camera_id, rec.clothes_id))
            for vec in (rec.face, rec.head_limb, rec.global_feat):
                fh.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def load_embeddings(path, role: str = "gallery") -> EmbeddingSet:
    """Read and validate a set written by :func:`save_embeddings`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, count, df, dl, dg = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")

    offset = _HEADER.size
    records = []
    for idx in range(count):
        if offset + 2 > len(data):
            raise FormatError(f"record {idx}: truncated before image_id length")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len > len(data):
            raise FormatError(f"record {idx}: truncated image_id")
        image_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        if offset + _REC_FIXED.size > len(data):
            raise FormatError(f"record {idx}: truncated label block")
        person_id, camera_id, clothes_id = _REC_FIXED.unpack_from(data, offset)
        offset += _REC_FIXED.size

        vecs = []
        for name, dim in (("face", df), ("head_limb", dl), ("global", dg)):
            nbytes = 4 * dim
            if offset + nbytes > len(data):
                have = (len(data) - offset) // 4
                raise DimensionError(
                    f"record {idx}: {name} has {have} values, header says {dim}"
                )
            vec = np.frombuffer(data[offset : offset + nbytes], dtype="<f4").copy()
            offset += nbytes
            vecs.append(vec)
        rec = EmbeddingRecord(image_id, person_id, camera_id, clothes_id, *vecs)
        _validate_record(rec, idx)
        records.append(rec)
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after last record")
    return EmbeddingSet(records=tuple(records), dims=(df, dl, dg), role=role)


def l2_normalize_set(eset: EmbeddingSet) -> EmbeddingSet:
    """Return a copy with unit-norm float64 vectors; zero faces stay exactly zero."""
    out = []
    for rec in eset.records:
        vecs = {}
        for attr in ("face", "head_limb", "global_feat"):
            vec = np.asarray(getattr(rec, attr), dtype=np.float64)
            norm = float(np.linalg.norm(vec))
            vecs[attr] = vec if norm < EPS_ZERO else vec / norm
        out.append(replace(rec, **vecs))
    return EmbeddingSet(records=tuple(out), dims=eset.dims, role=eset.role)
