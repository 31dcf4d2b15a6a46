"""Cosine distances and distance matrices."""

import numpy as np
import pytest

from tsdw.distance import (
    DistanceMatrix,
    cosine_distance,
    load_distance_matrix,
    pairwise_cosine,
    save_distance_matrix,
    stream_distance_matrix,
)
from tsdw.errors import DimensionError

from helpers import make_random_set


def test_identical_directions():
    assert cosine_distance([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert cosine_distance([1.0, 0.0], [2.0, 0.0]) == pytest.approx(0.0, abs=1e-12)


def test_orthogonal():
    assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)


def test_opposite():
    assert cosine_distance([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0)


def test_zero_vector_neutral():
    assert cosine_distance([1.0, 0.0], [0.0, 0.0]) == 1.0
    assert cosine_distance([0.0, 0.0], [0.0, 0.0]) == 1.0


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        cosine_distance([1.0, 0.0], [1.0, 0.0, 0.0])


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        cosine_distance([np.nan, 0.0], [1.0, 0.0])


def test_matrix_matches_elementwise_bruteforce():
    rng = np.random.default_rng(0)
    query = make_random_set(rng, n=2, dims=(3, 4, 5))
    gallery = make_random_set(rng, n=3, dims=(3, 4, 5))
    for stream, attr in (("face", "face"), ("head_limb", "head_limb"), ("global", "global_feat")):
        mat = stream_distance_matrix(query, gallery, stream)
        assert mat.shape == (2, 3)
        for i, q in enumerate(query.records):
            for j, g in enumerate(gallery.records):
                expected = cosine_distance(getattr(q, attr), getattr(g, attr))
                assert mat.values[i, j] == pytest.approx(expected, abs=1e-9)


def test_self_distance_zero():
    rng = np.random.default_rng(1)
    eset = make_random_set(rng, n=1)
    mat = stream_distance_matrix(eset, eset, "global")
    assert mat.values[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_absent_face_row_neutral():
    rng = np.random.default_rng(2)
    query = make_random_set(rng, n=3, face_absent_every=1)  # every face absent
    gallery = make_random_set(rng, n=4)
    mat = stream_distance_matrix(query, gallery, "face")
    assert np.all(mat.values == 1.0)


def test_symmetry_property():
    rng = np.random.default_rng(3)
    a = make_random_set(rng, n=5, face_absent_every=3)
    b = make_random_set(rng, n=7, face_absent_every=2)
    for stream in ("face", "head_limb", "global"):
        ab = stream_distance_matrix(a, b, stream).values
        ba = stream_distance_matrix(b, a, stream).values
        np.testing.assert_allclose(ab, ba.T, atol=1e-6)


def test_scale_invariance():
    rng = np.random.default_rng(4)
    q = rng.normal(size=(4, 6))
    g = rng.normal(size=(5, 6))
    base = pairwise_cosine(q, g)
    scaled = pairwise_cosine(3.7 * q, 0.25 * g)
    np.testing.assert_allclose(base, scaled, atol=1e-6)


def test_bounds():
    rng = np.random.default_rng(5)
    vals = pairwise_cosine(rng.normal(size=(20, 3)), rng.normal(size=(30, 3)))
    assert vals.min() >= 0.0 and vals.max() <= 2.0


def test_dims_mismatch_matrix():
    rng = np.random.default_rng(6)
    a = make_random_set(rng, n=2, dims=(3, 3, 3))
    b = make_random_set(rng, n=2, dims=(3, 3, 4))
    with pytest.raises(DimensionError):
        stream_distance_matrix(a, b, "global")


def test_matrix_validation():
    with pytest.raises(ValueError):
        DistanceMatrix(np.array([[3.0]]), "fused")
    with pytest.raises(ValueError):
        DistanceMatrix(np.array([[np.inf]]), "fused")
    with pytest.raises(DimensionError):
        DistanceMatrix(np.zeros(3), "fused")


def test_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    values = rng.uniform(0, 2, size=(3, 5)).astype(np.float32).astype(np.float64)
    mat = DistanceMatrix(values, "fused")
    path = tmp_path / "m.tsdwdm"
    save_distance_matrix(mat, path)
    loaded = load_distance_matrix(path)
    assert loaded.shape == (3, 5)
    np.testing.assert_array_equal(loaded.values, values)
