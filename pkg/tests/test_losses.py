import math

import numpy as np
import pytest
import torch

from tribranch.core import LossBreakdown
from tribranch.losses import (BerHuParams, DiscriminativeParams, berhu_loss,
                              discriminative_loss, total_loss,
                              weighted_cross_entropy, weighted_sum)

PARAMS = DiscriminativeParams(delta_v=0.5, delta_d=1.5)


def rand_embeddings(rng, h=8, w=8, e=3, clusters=3):
    emb = torch.from_numpy(rng.normal(size=(h, w, e)))
    inst = torch.from_numpy(rng.integers(0, clusters + 1, size=(h, w)))
    if inst.max() == 0:
        inst[0, 0] = 1
    return emb, inst


class TestWeightedCrossEntropy:
    def test_uniform_two_class_logits(self):
        logits = torch.zeros((4, 4, 2), dtype=torch.float64)
        target = torch.zeros((4, 4), dtype=torch.long)
        loss = weighted_cross_entropy(logits, target, torch.ones(2).double())
        assert float(loss) == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_correct_logit_drives_loss_to_zero(self):
        logits = torch.zeros((1, 1, 3), dtype=torch.float64)
        logits[0, 0, 1] = 50.0
        target = torch.ones((1, 1), dtype=torch.long)
        loss = weighted_cross_entropy(logits, target, torch.ones(3).double())
        assert float(loss) < 1e-20

    def test_loss_linear_in_weights(self):
        rng = np.random.default_rng(0)
        logits = torch.from_numpy(rng.normal(size=(5, 5, 2)))
        target = torch.zeros((5, 5), dtype=torch.long)   # only class 0 present
        w1 = torch.tensor([1.0, 1.0]).double()
        w2 = torch.tensor([2.0, 1.0]).double()
        l1 = float(weighted_cross_entropy(logits, target, w1))
        l2 = float(weighted_cross_entropy(logits, target, w2))
        assert l2 == pytest.approx(2 * l1, rel=1e-12)

    def test_ignored_pixels_excluded(self):
        logits = torch.zeros((1, 2, 2), dtype=torch.float64)
        logits[0, 1, 0] = 100.0   # ignored pixel would dominate if counted
        target = torch.tensor([[0, 255]])
        loss = weighted_cross_entropy(logits, target, torch.ones(2).double())
        assert float(loss) == pytest.approx(math.log(2), abs=1e-12)

    def test_all_ignored_raises(self):
        logits = torch.zeros((2, 2, 2))
        target = torch.full((2, 2), 255, dtype=torch.long)
        with pytest.raises(ValueError, match="ignored"):
            weighted_cross_entropy(logits, target, torch.ones(2))


class TestDiscriminativeLoss:
    def test_one_dimensional_two_point_cluster(self):
        emb = torch.tensor([0.0, 2.0], dtype=torch.float64).reshape(1, 2, 1)
        inst = torch.tensor([[1, 1]])
        l_var, l_dist, l_reg, l_inst = discriminative_loss(emb, inst, PARAMS)
        assert float(l_var) == pytest.approx(0.25, abs=1e-12)
        assert float(l_dist) == 0.0
        assert float(l_reg) == pytest.approx(1.0, abs=1e-12)
        assert float(l_inst) == pytest.approx(1.25, abs=1e-12)

    def test_tight_cluster_contributes_no_variance(self):
        rng = np.random.default_rng(5)
        offsets = rng.normal(size=(20, 2))
        offsets -= offsets.mean(axis=0)
        offsets *= 0.4 / np.linalg.norm(offsets, axis=1).max()
        emb = torch.from_numpy(offsets + np.array([3.0, -1.0])).reshape(4, 5, 2)
        inst = torch.ones((4, 5), dtype=torch.long)
        l_var, _, _, _ = discriminative_loss(emb, inst, PARAMS)
        assert float(l_var) == 0.0

    def test_centers_exactly_two_delta_d_apart_no_push(self):
        emb = torch.tensor([[0.0], [3.0]], dtype=torch.float64).reshape(1, 2, 1)
        inst = torch.tensor([[1, 2]])
        _, l_dist, _, _ = discriminative_loss(emb, inst, PARAMS)
        assert float(l_dist) == 0.0

    def test_close_centers_are_pushed(self):
        emb = torch.tensor([[0.0], [1.0]], dtype=torch.float64).reshape(1, 2, 1)
        inst = torch.tensor([[1, 2]])
        _, l_dist, _, _ = discriminative_loss(emb, inst, PARAMS)
        assert float(l_dist) == pytest.approx((3.0 - 1.0) ** 2, abs=1e-12)

    def test_translation_moves_only_regularizer(self):
        rng = np.random.default_rng(1)
        emb, inst = rand_embeddings(rng)
        shifted = emb + torch.tensor([10.0, -4.0, 2.5]).double()
        a = discriminative_loss(emb, inst, PARAMS)
        b = discriminative_loss(shifted, inst, PARAMS)
        assert float(a[0]) == pytest.approx(float(b[0]), rel=1e-9)
        assert float(a[1]) == pytest.approx(float(b[1]), rel=1e-9)
        assert float(a[2]) != pytest.approx(float(b[2]), rel=1e-3)

    def test_relabeling_instances_changes_nothing(self):
        rng = np.random.default_rng(2)
        emb, inst = rand_embeddings(rng)
        relabeled = inst.clone()
        relabeled[inst == 1], relabeled[inst == 2] = 7, 1
        a = discriminative_loss(emb, inst, PARAMS)
        b = discriminative_loss(emb, relabeled, PARAMS)
        for x, y in zip(a, b):
            assert float(x) == pytest.approx(float(y), rel=1e-12)

    def test_batch_mean_over_images(self):
        rng = np.random.default_rng(3)
        e1, i1 = rand_embeddings(rng)
        e2, i2 = rand_embeddings(rng)
        single1 = discriminative_loss(e1, i1, PARAMS)
        single2 = discriminative_loss(e2, i2, PARAMS)
        batched = discriminative_loss(torch.stack([e1, e2]),
                                      torch.stack([i1, i2]), PARAMS)
        for k in range(3):
            expected = (float(single1[k]) + float(single2[k])) / 2
            assert float(batched[k]) == pytest.approx(expected, rel=1e-12)

    def test_image_without_instances_contributes_zero(self):
        rng = np.random.default_rng(4)
        emb, inst = rand_embeddings(rng)
        empty_inst = torch.zeros_like(inst)
        batched = discriminative_loss(torch.stack([emb, emb]),
                                      torch.stack([inst, empty_inst]), PARAMS)
        single = discriminative_loss(emb, inst, PARAMS)
        for k in range(3):
            assert float(batched[k]) == pytest.approx(float(single[k]) / 2,
                                                      rel=1e-12)

    def test_no_instances_anywhere_raises(self):
        emb = torch.zeros((2, 2, 2))
        inst = torch.zeros((2, 2), dtype=torch.long)
        with pytest.raises(ValueError, match="instance"):
            discriminative_loss(emb, inst, PARAMS)

    def test_margin_invariant_enforced(self):
        with pytest.raises(ValueError, match="delta_d"):
            DiscriminativeParams(delta_v=0.5, delta_d=1.0)


class TestBerHu:
    def test_perfect_prediction(self):
        pred = torch.rand(5, 5, dtype=torch.float64) + 1
        loss = berhu_loss(pred, pred.clone(), torch.ones(5, 5).bool(),
                          BerHuParams())
        assert float(loss) == 0.0

    def test_hand_value_residuals_one_and_five(self):
        pred = torch.tensor([1.0, 5.0], dtype=torch.float64)
        target = torch.zeros(2, dtype=torch.float64)
        loss = berhu_loss(pred, target, torch.ones(2).bool(), BerHuParams(0.2))
        assert float(loss) == pytest.approx(7.0, abs=1e-12)

    def test_continuous_at_switch_point(self):
        # With a single pixel |d| == c only when c_fraction == 1.
        pred = torch.tensor([2.0], dtype=torch.float64)
        target = torch.tensor([0.0], dtype=torch.float64)
        valid = torch.ones(1).bool()
        l_abs = berhu_loss(pred, target, valid, BerHuParams(1.0))
        assert float(l_abs) == pytest.approx(2.0, abs=1e-12)
        eps = 1e-9
        below = berhu_loss(pred - eps, target, valid, BerHuParams(1.0))
        assert float(below) == pytest.approx(2.0, abs=1e-6)

    def test_upper_bounds_mae(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            d = torch.from_numpy(rng.normal(scale=3.0, size=30))
            loss = berhu_loss(d, torch.zeros(30).double(),
                              torch.ones(30).bool(), BerHuParams(0.2))
            mae = float(d.abs().mean())
            assert float(loss) >= mae - 1e-12

    def test_equals_mae_when_all_residuals_below_c(self):
        d = torch.tensor([1.0, 0.5, 0.2], dtype=torch.float64)
        loss = berhu_loss(d, torch.zeros(3).double(), torch.ones(3).bool(),
                          BerHuParams(1.0))
        assert float(loss) == pytest.approx(float(d.abs().mean()), abs=1e-12)

    def test_invalid_pixels_excluded(self):
        pred = torch.tensor([1.0, 1000.0], dtype=torch.float64)
        target = torch.zeros(2, dtype=torch.float64)
        valid = torch.tensor([True, False])
        loss = berhu_loss(pred, target, valid, BerHuParams(1.0))
        assert float(loss) == pytest.approx(1.0, abs=1e-12)

    def test_no_valid_pixels_raises(self):
        with pytest.raises(ValueError, match="valid"):
            berhu_loss(torch.ones(3), torch.ones(3), torch.zeros(3).bool(),
                       BerHuParams())

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError):
            BerHuParams(0.0)
        with pytest.raises(ValueError):
            BerHuParams(1.5)


class TestTotalLoss:
    def test_simple_sums(self):
        assert total_loss(1.0, 2.0, 0.0, 0.0, 3.0).total == 6.0
        assert total_loss(0.0, 0.0, 0.0, 0.0, 0.0).total == 0.0

    def test_weight_changes_total_linearly(self):
        base = total_loss(1.0, 0.5, 0.25, 0.25, 2.0, (1.0, 1.0, 1.0))
        up = total_loss(1.0, 0.5, 0.25, 0.25, 2.0, (2.0, 1.0, 1.0))
        assert up.total - base.total == pytest.approx(1.0, abs=1e-15)

    def test_breakdown_invariant_with_weights(self):
        b = total_loss(0.3, 0.1, 0.2, 0.4, 0.7, (1.5, 0.5, 2.0))
        assert b.total == b.l_sem + (b.l_var + b.l_dist + b.l_reg) + b.l_dep

    def test_matches_weighted_sum_order(self):
        values = (0.3, 0.1, 0.2, 0.4, 0.7)
        w = (1.0, 1.0, 1.0)
        assert total_loss(*values, w).total == weighted_sum(*values, w)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            total_loss(float("nan"), 0, 0, 0, 0)
        with pytest.raises(ValueError, match="finite"):
            total_loss(0, float("inf"), 0, 0, 0)

    def test_breakdown_type(self):
        assert isinstance(total_loss(1, 1, 1, 1, 1), LossBreakdown)
