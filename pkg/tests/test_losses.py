import math

import numpy as np
import pytest

from ptmvqa.losses import (LossBreakdown, batch_centroids, inter_loss,
                           intra_loss, loss_with_grads, smooth_l1, total_loss)
from ptmvqa.validation import ValidationError


def naive_total(preds, targets, transformed, fused, cluster_ids, margin, beta):
    """Independent straight-line recomputation of the combined objective
    (centroid inter mode, intra enabled)."""
    batch, n_models = len(preds), len(transformed[0])

    l1 = 0.0
    for p, t in zip(preds, targets):
        e = p - t
        l1 += 0.5 * e * e if abs(e) < 1 else abs(e) - 0.5
    l1 /= batch

    intra = 0.0
    if n_models >= 2:
        for i in range(batch):
            pair_sum, pairs = 0.0, 0
            for a in range(n_models):
                for b in range(a + 1, n_models):
                    fa, fb = transformed[i][a], transformed[i][b]
                    cos = (sum(x * y for x, y in zip(fa, fb))
                           / (math.sqrt(sum(x * x for x in fa))
                              * math.sqrt(sum(y * y for y in fb))))
                    pair_sum += 1.0 - cos
                    pairs += 1
            intra += pair_sum / pairs
        intra /= batch

    cents = {}
    for k in set(int(c) for c in cluster_ids):
        members = [fused[i] for i in range(batch) if cluster_ids[i] == k]
        cents[k] = [sum(col) / len(members) for col in zip(*members)]
    inter = 0.0
    for i in range(batch):
        k = int(cluster_ids[i])
        others = [t for t in cents if t != k]
        if not others:
            continue
        neg = min(others, key=lambda t: (
            math.sqrt(sum((a - b) ** 2 for a, b in zip(fused[i], cents[t]))), t))
        d_pos = sum((a - b) ** 2 for a, b in zip(fused[i], cents[k]))
        d_neg = sum((a - b) ** 2 for a, b in zip(fused[i], cents[neg]))
        inter += max(d_pos - d_neg + margin, 0.0)
    inter /= batch

    return l1 + beta * (intra + inter), l1, intra, inter


class TestSmoothL1:
    def test_zero_error(self):
        assert smooth_l1([2.0, 3.0], [2.0, 3.0]) == 0.0

    def test_quadratic_region(self):
        assert smooth_l1([0.5], [0.0]) == pytest.approx(0.125, abs=1e-15)

    def test_linear_region(self):
        assert smooth_l1([2.0], [0.0]) == pytest.approx(1.5, abs=1e-15)

    def test_batch_mean(self):
        assert smooth_l1([0.5, 2.0], [0.0, 0.0]) == pytest.approx(0.8125, abs=1e-15)


class TestIntra:
    def test_identical_features_zero(self):
        v = np.array([1.0, 2.0, -3.0])
        assert intra_loss([v, v, v]) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pair_is_one(self):
        assert intra_loss([np.array([1.0, 0.0]),
                           np.array([0.0, 1.0])]) == pytest.approx(1.0, abs=1e-12)

    def test_antipodal_pair_is_two(self):
        v = np.array([0.3, -0.4])
        assert intra_loss([v, -v]) == pytest.approx(2.0, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValidationError, match="zero-norm"):
            intra_loss([np.zeros(2), np.ones(2)])

    def test_needs_two_models(self):
        with pytest.raises(ValidationError, match="at least 2"):
            intra_loss([np.ones(2)])

    def test_scale_invariance_and_range(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            fs = rng.normal(size=(4, 5))
            value = intra_loss(fs)
            assert 0.0 <= value <= 2.0
            scales = rng.uniform(0.1, 10.0, 4)
            assert intra_loss(fs * scales[:, None]) == pytest.approx(value, abs=1e-12)

    def test_model_permutation_symmetry(self):
        rng = np.random.default_rng(1)
        fs = rng.normal(size=(4, 3))
        base = intra_loss(fs)
        for _ in range(5):
            perm = rng.permutation(4)
            assert intra_loss(fs[perm]) == pytest.approx(base, abs=1e-12)


class TestCentroids:
    def test_singleton(self):
        h = np.array([[2.0, -1.0]])
        out = batch_centroids(h, np.array([2]))
        assert np.array_equal(out[2][0], h[0]) and out[2][1] == 1

    def test_pair_mean(self):
        out = batch_centroids(np.array([[0.0, 0.0], [2.0, 2.0]]),
                              np.array([1, 1]))
        assert np.array_equal(out[1][0], [1.0, 1.0]) and out[1][1] == 2

    def test_absent_clusters_absent(self):
        out = batch_centroids(np.ones((2, 2)), np.array([0, 3]))
        assert set(out) == {0, 3}

    def test_matches_naive_grouping(self):
        rng = np.random.default_rng(3)
        fused = rng.normal(size=(10, 4))
        ids = rng.integers(0, 3, 10)
        out = batch_centroids(fused, ids)
        for k, (centroid, count) in out.items():
            members = fused[ids == k]
            naive = sum(members.tolist(), start=np.zeros(4)) / len(members)
            assert np.allclose(centroid, naive, atol=1e-12)
            assert count == len(members)


class TestInter:
    def centroids(self):
        return {0: (np.array([0.0, 0.0]), 2), 1: (np.array([1.0, 0.0]), 2)}

    def test_anchor_at_own_centroid(self):
        value = inter_loss(np.array([0.0, 0.0]), 0, self.centroids(), 0.05)
        assert value == pytest.approx(max(0.0 - 1.0 + 0.05, 0.0), abs=1e-15)

    def test_equidistant_anchor_gives_margin(self):
        value = inter_loss(np.array([0.5, 0.0]), 0, self.centroids(), 0.05)
        assert value == pytest.approx(0.05, abs=1e-15)

    def test_active_hinge(self):
        cents = {0: (np.array([1.0, 0.0]), 1), 1: (np.array([0.5, 0.5]), 1)}
        anchor = np.array([0.0, 0.0])  # d_pos = 1, d_neg = 0.5
        assert inter_loss(anchor, 0, cents, 0.05) == pytest.approx(0.55, abs=1e-15)

    def test_missing_anchor_centroid_rejected(self):
        with pytest.raises(ValidationError, match="no centroid"):
            inter_loss(np.zeros(2), 7, self.centroids(), 0.05)

    def test_lone_cluster_contributes_zero_with_warning(self):
        fused = np.ones((2, 3))
        with pytest.warns(RuntimeWarning, match="no other cluster"):
            bd = total_loss(np.array([1.0, 1.0]), np.array([1.0, 1.0]),
                            np.ones((2, 2, 3)), fused, np.array([0, 0]))
        assert bd.inter == 0.0

    def test_hardest_negative_is_used(self):
        cents = {0: (np.array([0.0, 0.0]), 1),
                 1: (np.array([10.0, 0.0]), 1),
                 2: (np.array([0.6, 0.0]), 1)}
        anchor = np.array([0.5, 0.0])
        # nearest other centroid is cluster 2 at distance 0.1
        expected = max(0.25 - 0.01 + 0.05, 0.0)
        assert inter_loss(anchor, 0, cents, 0.05) == pytest.approx(expected, abs=1e-15)


class TestTotal:
    def test_all_terms_vanish(self):
        v = np.array([0.5, 0.5])
        transformed = np.stack([np.stack([v, v]), np.stack([2 * v, 2 * v])])
        fused = np.stack([v, 2 * v])  # anchors at their own centroids, far apart
        bd = total_loss(np.array([2.0, 3.0]), np.array([2.0, 3.0]),
                        transformed, fused, np.array([0, 1]), margin=0.05)
        assert bd.l1 == 0.0 and bd.inter == 0.0
        assert bd.intra == pytest.approx(0.0, abs=1e-12)
        assert bd.total == pytest.approx(0.0, abs=1e-12)

    def test_beta_zero_is_exactly_smooth_l1(self):
        rng = np.random.default_rng(2)
        preds, targets = rng.uniform(1, 5, 6), rng.uniform(1, 5, 6)
        transformed = rng.normal(size=(6, 3, 4))
        fused = rng.normal(size=(6, 4))
        ids = rng.integers(0, 3, 6)
        bd = total_loss(preds, targets, transformed, fused, ids, metric_weight=0.0)
        assert bd.total == smooth_l1(preds, targets)

    def test_matches_naive_recomputation(self):
        rng = np.random.default_rng(4)
        for trial in range(6):
            batch, n_models, embed = 7, 3, 5
            preds = rng.uniform(0, 6, batch)
            targets = rng.uniform(1, 5, batch)
            transformed = rng.normal(size=(batch, n_models, embed))
            fused = rng.normal(size=(batch, embed))
            ids = rng.integers(0, 3, batch)
            if len(set(ids.tolist())) < 2:
                continue
            bd = total_loss(preds, targets, transformed, fused, ids,
                            margin=0.05, metric_weight=0.2)
            total, l1, intra, inter = naive_total(
                preds.tolist(), targets.tolist(), transformed.tolist(),
                fused.tolist(), ids.tolist(), 0.05, 0.2)
            assert bd.l1 == pytest.approx(l1, abs=1e-12)
            assert bd.intra == pytest.approx(intra, abs=1e-12)
            assert bd.inter == pytest.approx(inter, abs=1e-12)
            assert bd.total == pytest.approx(total, abs=1e-12)

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(5)
        batch = 8
        preds = rng.uniform(1, 5, batch)
        targets = rng.uniform(1, 5, batch)
        transformed = rng.normal(size=(batch, 2, 4))
        fused = rng.normal(size=(batch, 4))
        ids = np.array([0, 1, 2, 0, 1, 2, 0, 1])
        base = total_loss(preds, targets, transformed, fused, ids)
        for _ in range(5):
            perm = rng.permutation(batch)
            bd = total_loss(preds[perm], targets[perm], transformed[perm],
                            fused[perm], ids[perm])
            for field in ("l1", "intra", "inter", "total"):
                assert getattr(bd, field) == pytest.approx(
                    getattr(base, field), abs=1e-12)

    def test_breakdown_invariant(self):
        bd = LossBreakdown(l1=0.5, intra=0.2, inter=0.1,
                           total=0.5 + 0.2 * 0.3, margin=0.05, metric_weight=0.2)
        bd.validate()
        assert bd.total == pytest.approx(bd.l1 + bd.metric_weight * (bd.intra + bd.inter))


class TestSampleTripletMode:
    def test_runs_and_is_deterministic_per_rng_seed(self):
        rng_data = np.random.default_rng(6)
        batch = 8
        preds = rng_data.uniform(1, 5, batch)
        targets = rng_data.uniform(1, 5, batch)
        transformed = rng_data.normal(size=(batch, 2, 4))
        fused = rng_data.normal(size=(batch, 4))
        ids = np.array([0, 0, 1, 1, 2, 2, 0, 1])
        a = total_loss(preds, targets, transformed, fused, ids,
                       inter_mode="sample-triplet",
                       rng=np.random.default_rng(1))
        b = total_loss(preds, targets, transformed, fused, ids,
                       inter_mode="sample-triplet",
                       rng=np.random.default_rng(1))
        assert a == b and a.inter >= 0.0

    def test_needs_rng(self):
        with pytest.raises(ValidationError, match="rng"):
            total_loss(np.ones(2), np.ones(2), np.ones((2, 2, 3)),
                       np.ones((2, 3)), np.array([0, 1]),
                       inter_mode="sample-triplet")

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        batch, n_models, embed = 6, 2, 3
        preds = rng.uniform(1, 5, batch)
        targets = rng.uniform(1, 5, batch)
        transformed = rng.normal(size=(batch, n_models, embed))
        fused = rng.normal(size=(batch, embed))
        ids = np.array([0, 0, 1, 1, 2, 2])

        def value(fused_v):
            bd, _, _, _ = loss_with_grads(
                preds, targets, transformed, fused_v, ids,
                inter_mode="sample-triplet", rng=np.random.default_rng(42))
            return bd.total

        _, _, dfused, _ = loss_with_grads(
            preds, targets, transformed, fused, ids,
            inter_mode="sample-triplet", rng=np.random.default_rng(42))
        eps = 1e-6
        for i in range(batch):
            for j in range(embed):
                up, down = fused.copy(), fused.copy()
                up[i, j] += eps
                down[i, j] -= eps
                num = (value(up) - value(down)) / (2 * eps)
                assert num == pytest.approx(dfused[i, j], abs=1e-6)
