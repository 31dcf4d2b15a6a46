"""Synthetic tri-stream benchmark and the independent scoring oracles.

The generator models the regime the fusion head is built for: the face
stream is highly discriminative but absent with some probability, the
head-limb stream is noisy but always there, and the global stream is
pulled toward a shared clothing archetype per outfit so that it confuses
identities once clothing changes. Train and evaluation splits are
identity-disjoint; the face-absence coin uses its own random stream so
changing only the absence rate changes only face fields.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .fusion import DwtParams, face_confidence, gating_weights, lg_confidence
from .store import EmbeddingRecord, EmbeddingSet, make_set


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 100
    outfits_per_identity: int = 2
    images_per_outfit: int = 4
    dims: tuple[int, int, int] = (16, 16, 16)
    face_absence_prob: float = 0.5
    sigma_face: float = 0.1
    sigma_limb: float = 0.3
    sigma_global: float = 0.2
    clothing_shift_scale: float = 0.6
    clothing_pool: int = 8
    train_fraction: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.face_absence_prob <= 1.0):
            raise ConfigError("face_absence_prob must be in [0, 1]")
        for name in ("sigma_face", "sigma_limb", "sigma_global", "clothing_shift_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.outfits_per_identity < 1 or self.images_per_outfit < 1:
            raise ConfigError("need at least one outfit and one image per outfit")
        if not (0.0 < self.train_fraction < 1.0):
            raise ConfigError("train_fraction must be in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        if "dims" in data:
            data = {**data, "dims": tuple(data["dims"])}
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _noisy(rng: np.random.Generator, proto: np.ndarray, sigma: float) -> np.ndarray:
    v = proto + sigma * rng.normal(size=proto.shape)
    norm = np.linalg.norm(v)
    if norm < 1e-12:  # vanishingly unlikely; keep the prototype direction
        return proto.copy()
    return v / norm


def generate(cfg: SynthConfig) -> tuple[EmbeddingSet, EmbeddingSet, EmbeddingSet]:
    """Deterministic (train, query, gallery) sets for a config."""
    n_train = int(round(cfg.n_identities * cfg.train_fraction))
    n_eval = cfg.n_identities - n_train
    if n_train < 2 or n_eval < 2:
        raise ConfigError(
            f"split of {cfg.n_identities} identities leaves train={n_train}, eval={n_eval}; "
            "need >= 2 in each")

    rng_feat = np.random.default_rng([cfg.seed, 0])
    rng_face = np.random.default_rng([cfg.seed, 1])
    df, dl, dg = cfg.dims

    pool = [_unit(rng_feat, dg) for _ in range(max(1, cfg.clothing_pool))]

    train_records: list[EmbeddingRecord] = []
    query_records: list[EmbeddingRecord] = []
    gallery_records: list[EmbeddingRecord] = []

    for pid in range(cfg.n_identities):
        proto_f = _unit(rng_feat, df)
        proto_l = _unit(rng_feat, dl)
        proto_g = _unit(rng_feat, dg)
        is_train = pid < n_train
        for outfit in range(cfg.outfits_per_identity):
            clothes_id = pid * cfg.outfits_per_identity + outfit
            archetype = pool[int(rng_feat.integers(len(pool)))]
            shifted = proto_g + cfg.clothing_shift_scale * archetype
            shifted = shifted / np.linalg.norm(shifted)
            for j in range(cfg.images_per_outfit):
                face = _noisy(rng_feat, proto_f, cfg.sigma_face)
                limb = _noisy(rng_feat, proto_l, cfg.sigma_limb)
                glob = _noisy(rng_feat, shifted, cfg.sigma_global)
                if rng_face.random() < cfg.face_absence_prob:
                    face = np.zeros(df)
                if is_train:
                    camera = j % 3
                else:
                    camera = 0 if j == 0 else 1 + (j - 1) % 2
                rec = EmbeddingRecord(
                    image_id=f"p{pid:04d}_c{clothes_id:05d}_i{j}",
                    person_id=pid,
                    camera_id=camera,
                    clothes_id=clothes_id,
                    face=face.astype(np.float32),
                    head_limb=limb.astype(np.float32),
                    global_feat=glob.astype(np.float32),
                )
                if is_train:
                    train_records.append(rec)
                elif j == 0:
                    gallery_records.append(rec)
                else:
                    query_records.append(rec)

    train = make_set(train_records, cfg.dims, role="train")
    query = make_set(query_records, cfg.dims, role="query")
    gallery = make_set(gallery_records, cfg.dims, role="gallery")
    return train, query, gallery


def oracle_dwt(params: DwtParams, q: EmbeddingRecord, g: EmbeddingRecord,
               conf_override=None) -> np.ndarray:
    """Straight-line transliteration of the published decision pseudocode.

    Used solely as the equivalence oracle for the vectorized hard path:
    same confidence and gating primitives, independent branch logic.
    """
    over = conf_override or {}
    alpha = params.thresholds.alpha
    beta = params.thresholds.beta

    c_f = float(over.get("face", face_confidence(params, q, g)))
    if c_f > alpha[0]:
        return np.array([1.0, 0.0, 0.0])
    if beta[0] <= c_f <= alpha[0]:
        c_1 = float(over.get("lg1", lg_confidence(params, "second", q, g)))
        if c_1 > alpha[1]:
            return gating_weights(params, "gating_fg", q, g)
        if c_1 < beta[1]:
            return gating_weights(params, "gating_fl", q, g)
        return gating_weights(params, "gating_all", q, g)
    c_2 = float(over.get("lg2", lg_confidence(params, "third", q, g)))
    if c_2 > alpha[2]:
        return np.array([0.0, 0.0, 1.0])
    if c_2 < beta[2]:
        return np.array([0.0, 1.0, 0.0])
    return gating_weights(params, "gating_lg", q, g)


def oracle_map(distances, relevance) -> float:
    """Textbook average precision of one ranked row, ties broken by index."""
    dist = np.asarray(distances, dtype=np.float64)
    rel = np.asarray(relevance, dtype=bool)
    order = np.lexsort((np.arange(dist.size), dist))
    hits = 0
    precisions = []
    for rank, idx in enumerate(order, start=1):
        if rel[idx]:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return 0.0
    return float(np.mean(precisions))
