"""Retrieval metrics: CMC curve, Rank-k and mAP under clothing protocols.

For each query the gallery is masked by the protocol, sorted ascending
by (distance, gallery index), a stable tie-break that keeps reports
reproducible, and scored. Queries left with no relevant gallery item
are excluded from the averages and surfaced in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .distance import DistanceMatrix, stream_distance_matrix
from .errors import ConfigError, DimensionError, EvalError
from .fusion import DwtParams, fused_matrix
from .store import EmbeddingSet

PROTOCOL_MODES = ("standard", "same_clothes", "cloth_changing")


@dataclass(frozen=True)
class EvalProtocol:
    mode: str = "standard"
    cross_camera_only: bool = True

    def __post_init__(self):
        if self.mode not in PROTOCOL_MODES:
            raise ConfigError(f"mode must be one of {PROTOCOL_MODES}, got {self.mode!r}")


@dataclass
class EvalReport:
    protocol: str
    rank_k: dict[int, float]
    mean_ap: float
    cmc: list[float]
    valid_queries: int
    skipped_queries: int
    per_query_ap: list[float] = field(default_factory=list)
    seed: int | None = None

    @property
    def rank1(self) -> float:
        return self.rank_k[1]

    def to_json(self, include_per_query: bool = False) -> str:
        payload = {
            "protocol": self.protocol,
            "rank_k": {str(k): v for k, v in sorted(self.rank_k.items())},
            "mAP": self.mean_ap,
            "cmc": self.cmc,
            "valid_queries": self.valid_queries,
            "skipped_queries": self.skipped_queries,
        }
        if self.seed is not None:
            payload["seed"] = self.seed
        if include_per_query:
            payload["per_query_ap"] = self.per_query_ap
        return json.dumps(payload, sort_keys=True)


def _protocol_keep(protocol: EvalProtocol, q_pid, q_cam, q_clothes,
                   g_pids, g_cams, g_clothes) -> np.ndarray:
    keep = np.ones(g_pids.shape[0], dtype=bool)
    if protocol.cross_camera_only:
        keep &= ~((g_pids == q_pid) & (g_cams == q_cam))
    if protocol.mode == "cloth_changing":
        keep &= g_clothes != q_clothes
    elif protocol.mode == "same_clothes":
        # same-identity candidates must share the outfit; other identities stay
        keep &= (g_pids != q_pid) | (g_clothes == q_clothes)
    return keep


def evaluate(matrix: DistanceMatrix, query: EmbeddingSet, gallery: EmbeddingSet,
             protocol: EvalProtocol = EvalProtocol(), ranks=(1, 5, 10),
             max_rank: int = 20, seed: int | None = None) -> EvalReport:
    """Score a distance matrix; raises EvalError when no query is valid."""
    dist = matrix.values
    if dist.shape != (len(query), len(gallery)):
        raise DimensionError(
            f"matrix shape {dist.shape} != ({len(query)}, {len(gallery)})")
    g_pids = gallery.person_ids
    g_cams = gallery.camera_ids
    g_clothes = gallery.clothes_ids
    max_rank = min(max_rank, len(gallery)) or 1

    all_cmc = []
    all_ap = []
    skipped = 0
    for qi, rec in enumerate(query.records):
        keep = _protocol_keep(protocol, rec.person_id, rec.camera_id, rec.clothes_id,
                              g_pids, g_cams, g_clothes)
        if not keep.any():
            skipped += 1
            continue
        row = dist[qi, keep]
        cand_pids = g_pids[keep]
        order = np.lexsort((np.flatnonzero(keep), row))
        matches = (cand_pids[order] == rec.person_id).astype(np.int64)
        if not matches.any():
            skipped += 1
            continue
        cum = matches.cumsum()
        cmc = np.minimum(cum, 1)[:max_rank].astype(np.float64)
        if cmc.size < max_rank:  # gallery shrank below max_rank after masking
            cmc = np.pad(cmc, (0, max_rank - cmc.size), constant_values=cmc[-1])
        all_cmc.append(cmc)
        precision = cum / np.arange(1, matches.size + 1)
        all_ap.append(float((precision * matches).sum() / matches.sum()))

    if not all_cmc:
        raise EvalError("no query has a valid gallery match under this protocol")
    mean_cmc = np.mean(all_cmc, axis=0)
    rank_k = {k: float(mean_cmc[min(k, max_rank) - 1]) for k in ranks}
    return EvalReport(
        protocol=protocol.mode,
        rank_k=rank_k,
        mean_ap=float(np.mean(all_ap)),
        cmc=[float(v) for v in mean_cmc],
        valid_queries=len(all_ap),
        skipped_queries=skipped,
        per_query_ap=[float(a) for a in all_ap],
        seed=seed,
    )


_EQUAL_WEIGHT_ROWS = {
    "face+head_limb": np.array([0.5, 0.5, 0.0]),
    "face+global": np.array([0.5, 0.0, 0.5]),
    "head_limb+global": np.array([0.0, 0.5, 0.5]),
    "face+head_limb+global": np.array([1.0, 1.0, 1.0]) / 3.0,
}


def fixed_weight_matrix(query: EmbeddingSet, gallery: EmbeddingSet,
                        weights: np.ndarray) -> DistanceMatrix:
    """Fixed convex combination of the three stream matrices."""
    parts = [stream_distance_matrix(query, gallery, s).values
             for s in ("face", "head_limb", "global")]
    fused = sum(w * p for w, p in zip(weights, parts))
    return DistanceMatrix(np.clip(fused, 0.0, 2.0), "fused")


def ablation_sweep(query: EmbeddingSet, gallery: EmbeddingSet, params: DwtParams,
                   protocol: EvalProtocol = EvalProtocol()) -> dict[str, EvalReport]:
    """Reports for each single stream, each equal-weight fusion, and the dynamic head."""
    reports: dict[str, EvalReport] = {}
    for stream in ("face", "head_limb", "global"):
        matrix = stream_distance_matrix(query, gallery, stream)
        reports[stream] = evaluate(matrix, query, gallery, protocol)
    for name, weights in _EQUAL_WEIGHT_ROWS.items():
        reports[name] = evaluate(fixed_weight_matrix(query, gallery, weights),
                                 query, gallery, protocol)
    reports["dwt"] = evaluate(fused_matrix(params, query, gallery, mode="hard"),
                              query, gallery, protocol)
    return reports


def single_shot_gallery(gallery: EmbeddingSet, camera_id: int | None = None,
                        seed: int = 0) -> EmbeddingSet:
    """One seeded gallery image per person, optionally restricted to a camera."""
    rng = np.random.default_rng(seed)
    pids = gallery.person_ids
    cams = gallery.camera_ids
    chosen = []
    for pid in np.unique(pids):
        idxs = np.flatnonzero(pids == pid)
        if camera_id is not None:
            cam_idxs = idxs[cams[idxs] == camera_id]
            idxs = cam_idxs if cam_idxs.size else idxs
        chosen.append(int(rng.choice(idxs)))
    records = tuple(gallery.records[i] for i in sorted(chosen))
    return EmbeddingSet(records=records, dims=gallery.dims, role="gallery")
