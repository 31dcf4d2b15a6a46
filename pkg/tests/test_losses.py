"""Triplet, clothes-adversarial and smoothed-CE losses against oracles."""

import numpy as np
import pytest

from tsdw.errors import ConfigError, SamplingError
from tsdw.losses import (
    CalConfig,
    TripletConfig,
    batch_hard_triplet,
    cal_loss,
    clothes_classifier_loss,
    label_smoothed_ce,
)

from helpers import blockwise_rel_err, fd_gradients


def brute_force_triplet(fused, ids, margin):
    """Per-anchor exhaustive mining, lowest-index ties, mean reduction."""
    n = len(ids)
    hinges = []
    for a in range(n):
        best_p, best_pd = None, -np.inf
        best_n, best_nd = None, np.inf
        for j in range(n):
            if j == a:
                continue
            if ids[j] == ids[a]:
                if fused[a, j] > best_pd:
                    best_pd, best_p = fused[a, j], j
            else:
                if fused[a, j] < best_nd:
                    best_nd, best_n = fused[a, j], j
        hinges.append(max(best_pd - best_nd + margin, 0.0))
    return float(np.mean(hinges))


def random_batch(rng, n_ids=4, k=4):
    ids = np.repeat(np.arange(n_ids), k)
    n = ids.size
    mat = rng.uniform(0, 2, size=(n, n))
    np.fill_diagonal(mat, 0.0)
    return mat, ids


class TestBatchHardTriplet:
    def test_margin_satisfied_zero_loss(self):
        ids = np.array([0, 0, 1, 1])
        mat = np.full((4, 4), 0.9)
        for i, j in [(0, 1), (1, 0), (2, 3), (3, 2)]:
            mat[i, j] = 0.2
        np.fill_diagonal(mat, 0.0)
        loss, grad = batch_hard_triplet(mat, ids, margin=0.3)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_margin_violated(self):
        ids = np.array([0, 0, 1, 1])
        mat = np.full((4, 4), 0.6)
        for i, j in [(0, 1), (1, 0), (2, 3), (3, 2)]:
            mat[i, j] = 0.8
        np.fill_diagonal(mat, 0.0)
        loss, _ = batch_hard_triplet(mat, ids, margin=0.3)
        assert loss == pytest.approx(0.5)  # max(0.8 - 0.6 + 0.3, 0)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            mat, ids = random_batch(rng)
            loss, _ = batch_hard_triplet(mat, ids, margin=0.3)
            assert loss == pytest.approx(brute_force_triplet(mat, ids, 0.3), abs=1e-12)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(1)
        checked = 0
        while checked < 20:
            mat, ids = random_batch(rng, n_ids=3, k=3)
            loss, grad = batch_hard_triplet(mat, ids, margin=0.3)
            # keep away from kinks: selection gaps and the hinge itself
            hinge_parts = []
            for a in range(len(ids)):
                row = mat[a]
                pos = [row[j] for j in range(len(ids)) if j != a and ids[j] == ids[a]]
                neg = [row[j] for j in range(len(ids)) if ids[j] != ids[a]]
                pos.sort(reverse=True)
                neg.sort()
                if len(pos) > 1 and pos[0] - pos[1] < 1e-3:
                    break
                if len(neg) > 1 and neg[1] - neg[0] < 1e-3:
                    break
                hinge_parts.append(pos[0] - neg[0] + 0.3)
            else:
                if min(abs(h) for h in hinge_parts) < 1e-3:
                    continue
                checked += 1

                def objective():
                    value, _ = batch_hard_triplet(mat, ids, margin=0.3)
                    return value

                numeric = fd_gradients(objective, [mat], h=1e-5)
                assert blockwise_rel_err([grad], numeric) < 1e-4

    def test_reorder_invariance(self):
        rng = np.random.default_rng(2)
        mat, ids = random_batch(rng)
        loss, _ = batch_hard_triplet(mat, ids, margin=0.3)
        perm = rng.permutation(len(ids))
        loss_p, _ = batch_hard_triplet(mat[np.ix_(perm, perm)], ids[perm], margin=0.3)
        assert loss == pytest.approx(loss_p, abs=1e-12)

    def test_single_sample_identity_named(self):
        ids = np.array([0, 0, 7])
        mat = np.zeros((3, 3))
        with pytest.raises(SamplingError, match="7"):
            batch_hard_triplet(mat, ids, margin=0.3)

    def test_no_negatives(self):
        ids = np.array([0, 0, 0])
        with pytest.raises(SamplingError):
            batch_hard_triplet(np.zeros((3, 3)), ids, margin=0.3)

    def test_nonnegative_and_zero_iff(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            mat, ids = random_batch(rng)
            loss, _ = batch_hard_triplet(mat, ids, margin=0.3)
            assert loss >= 0.0
            # zero exactly when every anchor meets the margin
            expected_zero = brute_force_triplet(mat, ids, 0.3) == 0.0
            assert (loss == 0.0) == expected_zero

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TripletConfig(margin=-0.1)


def literal_cal_oracle(features, clothes_ids, person_ids, centroids, tau):
    """Termwise transcription of the adversarial objective."""
    total, used = 0.0, 0
    classes = sorted(set(int(c) for c in clothes_ids))
    owner = {int(c): int(p) for c, p in zip(clothes_ids, person_ids)}
    for i, f in enumerate(features):
        own_c, own_p = int(clothes_ids[i]), int(person_ids[i])
        pos = [c for c in classes if owner[c] == own_p and c != own_c]
        neg = [c for c in classes if owner[c] != own_p]
        if not pos:
            continue
        used += 1
        k = len(pos)
        for c in pos:
            num = np.exp(f @ centroids[c] / tau)
            den = num + sum(np.exp(f @ centroids[j] / tau) for j in neg)
            total += -np.log(num / den) / k
    return total / used


class TestCalLoss:
    def _instance(self, rng, n_persons=3, outfits=2, per_outfit=2, dim=4):
        clothes, persons, feats = [], [], []
        for p in range(n_persons):
            for o in range(outfits):
                c = p * outfits + o
                for _ in range(per_outfit):
                    clothes.append(c)
                    persons.append(p)
                    feats.append(rng.normal(size=dim))
        centroids = rng.normal(size=(n_persons * outfits, dim))
        return (np.array(feats), np.array(clothes), np.array(persons), centroids)

    def test_symmetric_two_class(self):
        # one sample; its person owns one other outfit; one rival class;
        # equal logits make the ratio exactly 1/2
        feats = np.zeros((1, 3))
        clothes = np.array([0])
        persons = np.array([0])
        centroids = np.stack([np.ones(3), np.ones(3), np.ones(3)])
        # class 0: own outfit; class 1: same person's other outfit; class 2: rival
        cfg = CalConfig(temperature=1.0, clothes_centroids=centroids)
        # register ownership by passing labels for all classes; the rival
        # sample has a single outfit, so it is skipped with a warning
        with pytest.warns(UserWarning, match="skipped 1"):
            loss, _, _, skipped = cal_loss(
                np.vstack([feats, np.zeros((2, 3))]),
                np.array([0, 1, 2]), np.array([0, 0, 1]), cfg)
        assert skipped == 1
        assert loss == pytest.approx(np.log(2.0), abs=1e-9)

    def test_saturation(self):
        cfg = CalConfig(temperature=1.0,
                        clothes_centroids=np.array([[0.0], [50.0], [-50.0]]))
        feats = np.array([[1.0], [1.0], [1.0]])
        clothes = np.array([0, 1, 2])
        persons = np.array([0, 0, 1])
        with pytest.warns(UserWarning, match="skipped 1"):
            loss, _, _, _ = cal_loss(feats, clothes, persons, cfg)
        # positive logit 50 vs negative -50: ratio ~ 1
        assert loss < 1e-9

    def test_matches_literal_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            feats, clothes, persons, centroids = self._instance(rng)
            tau = float(rng.uniform(0.2, 2.0))
            cfg = CalConfig(temperature=tau, clothes_centroids=centroids)
            loss, _, _, _ = cal_loss(feats, clothes, persons, cfg)
            ref = literal_cal_oracle(feats, clothes, persons, centroids, tau)
            assert loss == pytest.approx(ref, abs=1e-9)

    def test_gradients_match_fd(self):
        rng = np.random.default_rng(5)
        feats, clothes, persons, centroids = self._instance(rng)
        cfg = CalConfig(temperature=0.5, clothes_centroids=centroids)
        loss, d_feats, d_centroids, _ = cal_loss(feats, clothes, persons, cfg)

        def objective():
            value, _, _, _ = cal_loss(feats, clothes, persons, cfg)
            return value

        numeric = fd_gradients(objective, [feats, cfg.clothes_centroids], h=1e-6)
        assert blockwise_rel_err([d_feats, d_centroids], numeric) < 1e-4

    def test_temperature_logit_scale_invariance(self):
        rng = np.random.default_rng(6)
        feats, clothes, persons, centroids = self._instance(rng)
        l1, _, _, _ = cal_loss(feats, clothes, persons,
                               CalConfig(1.0, centroids))
        l2, _, _, _ = cal_loss(feats, clothes, persons,
                               CalConfig(4.0, 4.0 * centroids))
        assert l1 == pytest.approx(l2, abs=1e-9)

    def test_single_outfit_samples_skipped(self):
        rng = np.random.default_rng(7)
        feats = rng.normal(size=(3, 4))
        clothes = np.array([0, 1, 2])
        persons = np.array([0, 0, 1])  # person 1 owns a single outfit
        cfg = CalConfig(1.0, rng.normal(size=(3, 4)))
        with pytest.warns(UserWarning, match="skipped 1"):
            loss, _, _, skipped = cal_loss(feats, clothes, persons, cfg)
        assert skipped == 1

    def test_classifier_loss_gradient(self):
        rng = np.random.default_rng(8)
        feats, clothes, _, centroids = self._instance(rng)
        cfg = CalConfig(0.5, centroids)
        _, d_centroids = clothes_classifier_loss(feats, clothes, cfg)

        def objective():
            value, _ = clothes_classifier_loss(feats, clothes, cfg)
            return value

        numeric = fd_gradients(objective, [cfg.clothes_centroids], h=1e-6)
        assert blockwise_rel_err([d_centroids], numeric) < 1e-4

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            CalConfig(temperature=0.0, clothes_centroids=np.zeros((2, 2)))


class TestLabelSmoothedCe:
    def test_confident_correct(self):
        loss, _ = label_smoothed_ce(np.array([50.0, 0.0]), target=0, smoothing=0.0)
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_uniform_logits(self):
        for n in (2, 5, 11):
            loss, _ = label_smoothed_ce(np.zeros(n), target=0, smoothing=0.0)
            assert loss == pytest.approx(np.log(n), abs=1e-12)

    def test_smoothed_two_class(self):
        loss, _ = label_smoothed_ce(np.array([0.0, 0.0]), target=0, smoothing=0.1)
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(9)
        logits = rng.normal(size=6)
        _, grad = label_smoothed_ce(logits, target=2, smoothing=0.1)

        def objective():
            value, _ = label_smoothed_ce(logits, target=2, smoothing=0.1)
            return value

        numeric = fd_gradients(objective, [logits], h=1e-6)
        assert blockwise_rel_err([grad], numeric) < 1e-4

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            label_smoothed_ce(np.zeros(3), target=3)

    def test_bad_smoothing(self):
        with pytest.raises(ConfigError):
            label_smoothed_ce(np.zeros(3), target=0, smoothing=1.0)
