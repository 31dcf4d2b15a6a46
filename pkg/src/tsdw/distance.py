"""Cosine distances per stream and query-by-gallery distance matrices.

Distances are ``1 - cos(a, b)`` in ``[0, 2]``. A vector with norm below
``EPS_ZERO`` (an absent face) has no direction, so any distance against
it is the neutral value 1.0; the fusion weights zero it out downstream,
the neutral value only protects untrained or edge states from NaN.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError
from .store import EmbeddingSet
from .validation import EPS_ZERO, as_vector

STREAMS = ("face", "head_limb", "global")

DM_MAGIC = b"TSDWDM"


@dataclass(frozen=True)
class DistanceMatrix:
    """A q x g matrix of distances for one stream (or the fused result)."""

    values: np.ndarray
    stream_tag: str  # one of STREAMS or "fused"

    def __post_init__(self):
        vals = self.values
        if vals.ndim != 2:
            raise DimensionError(f"distance matrix must be 2-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("distance matrix contains non-finite values")
        if vals.size and (vals.min() < -1e-9 or vals.max() > 2 + 1e-9):
            raise ValueError("distance matrix entries outside [0, 2]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def cosine_distance(a, b) -> float:
    """1 - cos(a, b); returns the neutral 1.0 when either vector has ~zero norm."""
    av = as_vector(a, "a")
    bv = as_vector(b, "b")
    if av.shape != bv.shape:
        raise DimensionError(f"cosine_distance: dims {av.shape[0]} and {bv.shape[0]} differ")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na < EPS_ZERO or nb < EPS_ZERO:
        return 1.0
    d = 1.0 - float(np.dot(av, bv)) / (na * nb)
    return float(min(max(d, 0.0), 2.0))


def _unit_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize rows to unit norm; returns (normalized, zero-row mask)."""
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    zero = norms < EPS_ZERO
    safe = np.where(zero, 1.0, norms)
    return mat / safe[:, None], zero


def pairwise_cosine(qmat: np.ndarray, gmat: np.ndarray) -> np.ndarray:
    """Dense 1 - cos matrix between row sets; zero rows/cols get the neutral 1.0."""
    if qmat.shape[1] != gmat.shape[1]:
        raise DimensionError(
            f"pairwise_cosine: dims {qmat.shape[1]} and {gmat.shape[1]} differ"
        )
    qn, qzero = _unit_rows(qmat)
    gn, gzero = _unit_rows(gmat)
    dist = 1.0 - qn @ gn.T
    dist[qzero, :] = 1.0
    dist[:, gzero] = 1.0
    return np.clip(dist, 0.0, 2.0)


def stream_distance_matrix(query: EmbeddingSet, gallery: EmbeddingSet, stream: str) -> DistanceMatrix:
    """Cosine distance matrix of one stream between two sets."""
    if stream not in STREAMS:
        raise ValueError(f"unknown stream {stream!r}")
    if tuple(query.dims) != tuple(gallery.dims):
        raise DimensionError(f"query dims {query.dims} != gallery dims {gallery.dims}")
    return DistanceMatrix(pairwise_cosine(query.stream(stream), gallery.stream(stream)), stream)


def save_distance_matrix(matrix: DistanceMatrix, path) -> None:
    q, g = matrix.shape
    with open(path, "wb") as fh:
        fh.write(DM_MAGIC)
        fh.write(struct.pack("<II", q, g))
        fh.write(np.ascontiguousarray(matrix.values, dtype="<f4").tobytes())


def load_distance_matrix(path, stream_tag: str = "fused") -> DistanceMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(DM_MAGIC)] != DM_MAGIC:
        raise FormatError(f"{path}: bad magic")
    q, g = struct.unpack_from("<II", data, len(DM_MAGIC))
    body = data[len(DM_MAGIC) + 8 :]
    if len(body) != 4 * q * g:
        raise FormatError(f"{path}: expected {4 * q * g} payload bytes, got {len(body)}")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(q, g)
    return DistanceMatrix(values, stream_tag)
