"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from tsdw.fusion import DwtParams, Thresholds, init_dwt_params
from tsdw.store import EmbeddingRecord, EmbeddingSet, make_set


def unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def make_record(rng: np.random.Generator, dims=(4, 4, 4), person_id=0, camera_id=0,
                clothes_id=0, face_present=True, image_id=None,
                dtype=np.float32) -> EmbeddingRecord:
    df, dl, dg = dims
    face = unit(rng, df) if face_present else np.zeros(df)
    if image_id is None:
        image_id = f"img{rng.integers(1 << 30)}"
    return EmbeddingRecord(
        image_id=image_id,
        person_id=person_id,
        camera_id=camera_id,
        clothes_id=clothes_id,
        face=face.astype(dtype),
        head_limb=unit(rng, dl).astype(dtype),
        global_feat=unit(rng, dg).astype(dtype),
    )


def make_random_set(rng: np.random.Generator, n=6, dims=(4, 4, 4), n_ids=3,
                    face_absent_every=0, role="gallery") -> EmbeddingSet:
    records = []
    for i in range(n):
        absent = face_absent_every and (i % face_absent_every == 0)
        records.append(make_record(
            rng, dims, person_id=i % n_ids, camera_id=i % 2, clothes_id=i % (2 * n_ids),
            face_present=not absent, image_id=f"r{i:03d}"))
    return make_set(records, dims, role=role)


def random_params(rng: np.random.Generator, dims=(4, 4, 4), hidden=6,
                  temperature=0.1) -> DwtParams:
    """Fresh parameters with randomized weights and random valid thresholds."""
    params = init_dwt_params(dims, seed=int(rng.integers(1 << 31)), hidden_dim=hidden,
                             branch_temperature=temperature)
    # spread thresholds away from the fixed defaults, keeping beta <= 0.9 alpha
    raw_a = rng.uniform(-1.5, 1.5, size=3)
    raw_b = rng.uniform(-2.0, 1.5, size=3)
    params.thresholds = Thresholds(raw_a, raw_b)
    # randomize biases too so confidences leave 0.5
    for net in params.nets.values():
        for layer in net.layers:
            layer.bias += rng.normal(0, 0.3, size=layer.bias.shape)
    return params


def blockwise_rel_err(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    """Max over blocks of ||a - n|| / max(||a||, ||n||, 1e-6).

    The 1e-6 floor puts blocks whose true gradient sits at the central-
    difference noise floor (~1e-11 for h=1e-5 on O(1) values) into the
    absolute-error regime instead of dividing noise by noise.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-6)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def fd_gradients(fn, params, h=1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar fn() over live parameter arrays."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = fn()
            p[idx] = old - h
            down = fn()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads
