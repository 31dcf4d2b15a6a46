"""Fusion-stage training: PK batches, soft-mode decisions, batch-hard triplet.

The three stream embeddings arrive precomputed, so the freeze schedule
applies to optional per-stream linear adapters (identity-initialized
square maps re-normalized after application); with adapters disabled the
schedule is a no-op and only the decision head trains. Everything is
deterministic under the config seed in single-threaded mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .distance import pairwise_cosine
from .errors import ConfigError, NumericsError, SamplingError
from .fusion import (
    BRANCH_LABELS,
    DwtGrads,
    DwtParams,
    decide_hard_batch,
    decide_soft_backward,
    decide_soft_batch,
    encode_pairs,
    encode_pairs_backward,
    init_dwt_params,
)
from .losses import CalConfig, batch_hard_triplet, cal_loss, clothes_classifier_loss
from .nn import LrSchedule, adam_step, init_adam, lr_at
from .store import EmbeddingSet, l2_normalize_set

_STREAM_KEYS = ("f", "l", "g")
_ADAPTER_NAMES = {"f": "face", "l": "head_limb", "g": "global"}


@dataclass(frozen=True)
class PkSamplerConfig:
    p_identities: int = 4
    k_per_identity: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.p_identities < 2 or self.k_per_identity < 2:
            raise ConfigError("PK sampling needs P >= 2 and K >= 2")


@dataclass
class TrainConfig:
    epochs: int = 50
    freeze_epochs: int = 10
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(5e-6, (20, 40), 0.1))
    weight_decay: float = 5e-4
    margin: float = 0.3
    branch_temperature: float = 0.1
    adapter_enabled: bool = False
    seed: int = 0
    sampler: PkSamplerConfig = field(default_factory=PkSamplerConfig)
    hidden_dim: int = 64

    def __post_init__(self):
        if self.freeze_epochs > self.epochs:
            raise ConfigError("freeze_epochs cannot exceed epochs")


@dataclass
class TrainResult:
    params: DwtParams
    history: list[dict]
    adapters: dict[str, np.ndarray] | None  # keyed face/head_limb/global


def sample_batch(train_set: EmbeddingSet, cfg: PkSamplerConfig,
                 rng: np.random.Generator) -> list[int]:
    """P identities x K record indices; small identities repeat samples."""
    ids = train_set.person_ids
    by_id: dict[int, np.ndarray] = {}
    for pid in np.unique(ids):
        idxs = np.flatnonzero(ids == pid)
        if idxs.size >= 2:
            by_id[int(pid)] = idxs
    if len(by_id) < cfg.p_identities:
        raise SamplingError(
            f"need {cfg.p_identities} identities with >=2 samples, have {len(by_id)}"
        )
    chosen = rng.choice(sorted(by_id), size=cfg.p_identities, replace=False)
    batch: list[int] = []
    for pid in chosen:
        idxs = by_id[int(pid)]
        if idxs.size >= cfg.k_per_identity:
            take = rng.choice(idxs, size=cfg.k_per_identity, replace=False)
        else:
            extra = rng.choice(idxs, size=cfg.k_per_identity - idxs.size, replace=True)
            take = np.concatenate([idxs, extra])
        batch.extend(int(i) for i in take)
    return batch


def identity_adapters(dims) -> dict[str, np.ndarray]:
    return {name: np.eye(d) for name, d in zip(_ADAPTER_NAMES.values(), dims)}


def _apply_adapter(mat: np.ndarray, rows: np.ndarray):
    """rows @ A.T re-normalized per row; zero rows pass through untouched."""
    u = rows @ mat.T
    norms = np.linalg.norm(u, axis=1)
    zero = np.linalg.norm(rows, axis=1) < 1e-12
    safe = np.where((norms < 1e-12) | zero, 1.0, norms)
    out = u / safe[:, None]
    out[zero] = 0.0
    return out, (rows, u, safe, zero)


def _adapter_backward(cache, d_out: np.ndarray) -> np.ndarray:
    rows, u, safe, zero = cache
    v = u / safe[:, None]
    inner = (d_out * v).sum(axis=1, keepdims=True)
    du = (d_out - inner * v) / safe[:, None]
    du[zero] = 0.0
    return du.T @ rows


def _stream_rows(eset: EmbeddingSet) -> dict[str, np.ndarray]:
    named = {"f": "face", "l": "head_limb", "g": "global"}
    return {k: eset.stream(v).astype(np.float64) for k, v in named.items()}


def apply_adapters_to_rows(rows: dict[str, np.ndarray],
                           adapters: dict[str, np.ndarray] | None):
    """Adapted, re-normalized stream rows plus caches for the backward pass."""
    if adapters is None:
        return dict(rows), None
    out, caches = {}, {}
    for k in _STREAM_KEYS:
        out[k], caches[k] = _apply_adapter(adapters[_ADAPTER_NAMES[k]], rows[k])
    return out, caches


def batch_soft_loss(params: DwtParams, raw_rows: dict[str, np.ndarray],
                    face_ok: np.ndarray, person_ids: np.ndarray, margin: float,
                    adapters: dict[str, np.ndarray] | None = None,
                    want_grads: bool = True):
    """Soft fused within-batch matrix + batch-hard triplet, with gradients.

    raw_rows maps "f"/"l"/"g" to (m, D) unit-norm rows (zero faces stay
    zero). Returns (loss, head gradients, adapter gradients); gradient
    entries are None when not requested or no adapters are given.
    """
    rows, caches = apply_adapters_to_rows(raw_rows, adapters)
    m = face_ok.shape[0]
    q_idx = np.repeat(np.arange(m), m)
    g_idx = np.tile(np.arange(m), m)
    enc = {k: encode_pairs(rows[k][q_idx], rows[k][g_idx]) for k in _STREAM_KEYS}
    pair_ok = face_ok[q_idx] & face_ok[g_idx]

    dists = {k: pairwise_cosine(rows[k], rows[k]) for k in _STREAM_KEYS}
    weights, tape = decide_soft_batch(params, enc, pair_ok)
    d_stack = np.stack([dists[k].ravel() for k in _STREAM_KEYS], axis=1)
    fused = (weights * d_stack).sum(axis=1).reshape(m, m)

    if not np.all(np.isfinite(fused)):
        bad = np.argwhere(~np.isfinite(fused))[0]
        raise NumericsError(f"non-finite fused distance at batch pair ({bad[0]}, {bad[1]})")
    loss, gmat = batch_hard_triplet(fused, person_ids, margin)
    if not np.isfinite(loss):
        raise NumericsError("non-finite triplet loss")
    if not want_grads:
        return loss, None, None

    upstream = gmat.ravel()
    grad_w = upstream[:, None] * d_stack
    head_grads: DwtGrads = decide_soft_backward(params, tape, grad_w,
                                                want_encoding_grads=adapters is not None)
    adapter_grads = None
    if adapters is not None:
        adapter_grads = {}
        for s, k in enumerate(_STREAM_KEYS):
            d_dist = (upstream * weights[:, s]).reshape(m, m)
            # distance path: d = 1 - q.g over unit rows
            d_q_rows = -(d_dist @ rows[k])
            d_g_rows = -(d_dist.T @ rows[k])
            # encoding path
            dq_pairs, dg_pairs = encode_pairs_backward(
                head_grads.enc[k], rows[k][q_idx], rows[k][g_idx])
            d_q_rows += dq_pairs.reshape(m, m, -1).sum(axis=1)
            d_g_rows += dg_pairs.reshape(m, m, -1).sum(axis=0)
            adapter_grads[_ADAPTER_NAMES[k]] = _adapter_backward(
                caches[k], d_q_rows + d_g_rows)
    return loss, head_grads, adapter_grads


def _branch_occupancy(params: DwtParams, rows, face_ok: np.ndarray) -> dict[str, float]:
    """Hard-mode branch fractions over all ordered pairs of a probe slice."""
    n = face_ok.shape[0]
    enc = {}
    for k in _STREAM_KEYS:
        enc[k] = encode_pairs(np.repeat(rows[k], n, axis=0), np.tile(rows[k], (n, 1)))
    ok = np.repeat(face_ok, n) & np.tile(face_ok, n)
    _, branch = decide_hard_batch(params, enc, ok)
    counts = np.bincount(branch, minlength=len(BRANCH_LABELS))
    total = max(1, branch.size)
    return {label: float(c) / total for label, c in zip(BRANCH_LABELS, counts)}


def train_fusion(train_set: EmbeddingSet, cfg: TrainConfig,
                 params: DwtParams | None = None) -> TrainResult:
    """Train the decision head (and optionally adapters) on one embedding set."""
    eset = l2_normalize_set(train_set)
    rows_raw = _stream_rows(eset)
    face_ok_all = eset.face_present
    ids_all = eset.person_ids
    n = len(eset)
    if params is None:
        params = init_dwt_params(eset.dims, seed=cfg.seed, hidden_dim=cfg.hidden_dim,
                                 branch_temperature=cfg.branch_temperature)

    adapters = identity_adapters(eset.dims) if cfg.adapter_enabled else None

    head_params = params.trainable()
    # decay only weight matrices; biases and thresholds stay undecayed
    decay_mask = [p.ndim == 2 for p in head_params]
    head_state = init_adam(head_params)
    if adapters is not None:
        adapter_params = [adapters[_ADAPTER_NAMES[k]] for k in _STREAM_KEYS]
        adapter_state = init_adam(adapter_params)

    rng = np.random.default_rng(cfg.seed)
    bsz = cfg.sampler.p_identities * cfg.sampler.k_per_identity
    n_batches = max(1, n // bsz)
    probe = slice(0, min(64, n))

    history: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg.schedule, epoch)
        train_adapters = adapters is not None and epoch >= cfg.freeze_epochs
        losses = []
        for b in range(n_batches):
            idx = np.array(sample_batch(eset, cfg.sampler, rng))
            raw = {k: rows_raw[k][idx] for k in _STREAM_KEYS}
            try:
                loss, head_grads, adapter_grads = batch_soft_loss(
                    params, raw, face_ok_all[idx], ids_all[idx], cfg.margin,
                    adapters=adapters if train_adapters else None)
            except NumericsError as exc:
                raise NumericsError(f"epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(loss)
            adam_step(head_params, head_grads.flat(), head_state, lr,
                      cfg.weight_decay, decay_mask)
            if train_adapters:
                grads = [adapter_grads[_ADAPTER_NAMES[k]] for k in _STREAM_KEYS]
                adam_step(adapter_params, grads, adapter_state, lr, cfg.weight_decay)

        probe_rows, _ = apply_adapters_to_rows(
            {k: rows_raw[k][probe] for k in _STREAM_KEYS}, adapters)
        occupancy = _branch_occupancy(params, probe_rows, face_ok_all[probe])
        history.append({
            "epoch": epoch,
            "lr": lr,
            "mean_loss": float(np.mean(losses)) if losses else 0.0,
            "branch_occupancy": occupancy,
        })
    return TrainResult(params=params, history=history, adapters=adapters)


def apply_adapters_to_set(eset: EmbeddingSet, adapters: dict[str, np.ndarray] | None) -> EmbeddingSet:
    """Rebuild a set with adapted, re-normalized stream vectors."""
    if adapters is None:
        return eset
    eset = l2_normalize_set(eset)
    rows = _stream_rows(eset)
    adapted, _ = apply_adapters_to_rows(rows, adapters)
    records = []
    for i, rec in enumerate(eset.records):
        records.append(replace(rec, face=adapted["f"][i], head_limb=adapted["l"][i],
                               global_feat=adapted["g"][i]))
    return EmbeddingSet(records=tuple(records), dims=eset.dims, role=eset.role)


def cal_finetune_global_adapter(train_set: EmbeddingSet, adapters: dict[str, np.ndarray],
                                rounds: int = 5, lr: float = 1e-2,
                                temperature: float = 1.0 / 16.0,
                                seed: int = 0) -> tuple[dict[str, np.ndarray], list[float]]:
    """Adversarial clothes round-trip on the global adapter.

    Each round first fits the clothes-classifier centroids to the current
    adapted features, then pushes the adapter the other way with the
    clothes-adversarial loss. Returns the adapters and per-round losses.
    """
    eset = l2_normalize_set(train_set)
    rows = _stream_rows(eset)
    clothes = eset.clothes_ids
    persons = eset.person_ids
    classes = np.unique(clothes)
    rng = np.random.default_rng(seed)
    dim = eset.dims[2]
    cfg = CalConfig(temperature=temperature,
                    clothes_centroids=rng.normal(0, 0.1, size=(classes.size, dim)))

    mat = adapters["global"]
    cls_state = init_adam([cfg.clothes_centroids])
    ada_state = init_adam([mat])
    losses = []
    for _ in range(rounds):
        feats, cache = _apply_adapter(mat, rows["g"])
        _, d_centroids = clothes_classifier_loss(feats, clothes, cfg, classes)
        adam_step([cfg.clothes_centroids], [d_centroids], cls_state, lr)

        feats, cache = _apply_adapter(mat, rows["g"])
        loss, d_feats, _, _ = cal_loss(feats, clothes, persons, cfg, classes)
        d_mat = _adapter_backward(cache, d_feats)
        adam_step([mat], [d_mat], ada_state, lr)
        losses.append(loss)
    return adapters, losses
