"""Margin objective stack: hand-computed logit values, tie and guard
behavior, collapse to plain softmax cross-entropy."""

import math

import numpy as np
import pytest

from spkforge.autodiff import Tensor
from spkforge.errors import TrainingError
import spkforge.objectives as O


def unit_rows(a):
    a = np.asarray(a, dtype=np.float64)
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


class TestLossConfig:
    def test_valid_defaults(self):
        cfg = O.LossConfig(num_classes=10, embed_dim=8)
        assert cfg.subcenters == 3 and cfg.topk == 5

    @pytest.mark.parametrize(
        "kw,msg",
        [
            (dict(num_classes=1), "2 classes"),
            (dict(scale=0.0), "scale"),
            (dict(margin=-0.1), "margin"),
            (dict(margin=2.0), "margin"),
            (dict(subcenters=0), "subcenters"),
            (dict(topk=10), "topk"),
            (dict(inter_margin=-1.0), "inter_margin"),
        ],
    )
    def test_rejects_bad_values(self, kw, msg):
        base = dict(num_classes=10, embed_dim=8)
        base.update(kw)
        with pytest.raises(TrainingError, match=msg):
            O.LossConfig(**base)


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = O.cross_entropy(np.zeros((1, 2)), np.array([0]))
        assert abs(loss.data - math.log(2.0)) < 1e-15

    def test_two_class_closed_form(self):
        # -log softmax([2, 0])[0] = log(1 + e^-2) = 0.12692801104297263
        loss = O.cross_entropy(np.array([[2.0, 0.0]]), np.array([0]))
        assert abs(loss.data - 0.12692801104297263) < 1e-15

    def test_batch_mean(self):
        logits = np.array([[2.0, 0.0], [0.0, 0.0]])
        loss = O.cross_entropy(logits, np.array([0, 1]))
        want = 0.5 * (0.12692801104297263 + math.log(2.0))
        assert abs(loss.data - want) < 1e-15

    def test_huge_logits_stay_finite(self):
        loss = O.cross_entropy(np.array([[1e4, 0.0], [0.0, -1e4]]), np.array([0, 0]))
        assert np.isfinite(loss.data)

    def test_label_out_of_range(self):
        with pytest.raises(TrainingError, match="out of range"):
            O.cross_entropy(np.zeros((1, 3)), np.array([3]))

    def test_labels_must_be_1d(self):
        with pytest.raises(TrainingError, match="1-D"):
            O.cross_entropy(np.zeros((1, 3)), np.array([[0]]))


class TestSubcenterCosines:
    def test_max_over_subcenters_hand_value(self):
        # embedding along x; class 0 has sub-centers at 30 and 60 degrees:
        # the winning cosine is cos(30 deg) = 0.8660254037844387
        e = np.array([[1.0, 0.0]])
        w = np.zeros((2, 2, 2))
        w[0, 0] = [math.cos(math.pi / 6), math.sin(math.pi / 6)]
        w[0, 1] = [math.cos(math.pi / 3), math.sin(math.pi / 3)]
        w[1, 0] = [-1.0, 0.0]
        w[1, 1] = [0.0, 1.0]
        cos = O.subcenter_cosines(e, w).data
        assert abs(cos[0, 0] - 0.8660254037844387) < 1e-15
        assert abs(cos[0, 1] - 0.0) < 1e-15  # max(-1, 0)

    def test_scale_invariance(self, rng):
        e = rng.normal(size=(3, 4))
        w = unit_rows(rng.normal(size=(5, 2, 4)))
        a = O.subcenter_cosines(e, w).data
        b = O.subcenter_cosines(7.5 * e, w).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_range(self, rng):
        cos = O.subcenter_cosines(rng.normal(size=(6, 8)), rng.normal(size=(10, 3, 8))).data
        assert (cos <= 1.0 + 1e-12).all() and (cos >= -1.0 - 1e-12).all()

    def test_single_subcenter_is_plain_cosine(self, rng):
        e = rng.normal(size=(4, 6))
        w = rng.normal(size=(5, 1, 6))
        got = O.subcenter_cosines(e, w).data
        want = unit_rows(e) @ unit_rows(w[:, 0, :]).T
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_zero_embedding_rejected(self):
        with pytest.raises(TrainingError, match="zero embedding"):
            O.subcenter_cosines(np.zeros((1, 4)), np.ones((2, 1, 4)))

    def test_dim_mismatch(self, rng):
        with pytest.raises(TrainingError, match="embeddings must be"):
            O.subcenter_cosines(rng.normal(size=(2, 5)), rng.normal(size=(3, 1, 4)))


class TestAamLogits:
    CFG = O.LossConfig(num_classes=3, embed_dim=4, scale=30.0, margin=0.2, subcenters=1, topk=0)

    def test_target_margin_hand_value(self):
        # cos(theta)=1 on the target: logit = 30 * cos(0 + 0.2) = 29.401997335237248
        cos = np.array([[1.0, 0.3, -0.2]])
        out = O.aam_logits(cos, np.array([0]), self.CFG).data
        assert abs(out[0, 0] - 30.0 * math.cos(0.2)) < 1e-10
        assert abs(out[0, 0] - 29.401997335237248) < 1e-9

    def test_non_targets_unscathed(self):
        cos = np.array([[0.7, 0.3, -0.2]])
        out = O.aam_logits(cos, np.array([0]), self.CFG).data
        np.testing.assert_allclose(out[0, 1:], 30.0 * cos[0, 1:], atol=1e-12)

    def test_margin_is_angle_addition(self, rng):
        theta = rng.uniform(0.1, math.pi - 0.3, size=5)
        cos = np.cos(theta)[None, :].repeat(1, axis=0)
        cfg = O.LossConfig(num_classes=5, embed_dim=4, scale=1.0, margin=0.2, subcenters=1, topk=0)
        out = O.aam_logits(cos[:1], np.array([2]), cfg).data
        assert abs(out[0, 2] - math.cos(theta[2] + 0.2)) < 1e-12

    def test_guard_keeps_logit_monotone(self):
        # sweep theta over [0, pi]: the margined logit must strictly decrease
        theta = np.linspace(0.0, math.pi, 300)
        cos = np.cos(theta)[:, None]
        cos = np.concatenate([cos, np.zeros_like(cos), np.zeros_like(cos)], axis=1)
        out = O.aam_logits(cos, np.zeros(300, dtype=int), self.CFG).data[:, 0]
        assert (np.diff(out) < 0).all()

    def test_zero_margin_is_pure_scaling(self, rng):
        cfg = O.LossConfig(num_classes=4, embed_dim=4, scale=12.0, margin=0.0, subcenters=1, topk=0)
        cos = np.clip(rng.normal(size=(3, 4)), -1, 1)
        out = O.aam_logits(cos, np.array([0, 1, 2]), cfg).data
        np.testing.assert_allclose(out, 12.0 * cos, atol=1e-12)


class TestInterTopk:
    CFG = O.LossConfig(num_classes=4, embed_dim=4, scale=30.0, margin=0.0, subcenters=1, topk=1, inter_margin=0.1)

    def test_hardest_negative_eased_hand_value(self):
        # the eased logit moves cos(theta) to cos(theta - 0.1);
        # at cos=0.9 that is cos(acos(0.9) - 0.1) = 0.93902013...
        cos = np.array([[0.95, 0.9, 0.1, -0.5]])
        logits = O.aam_logits(Tensor(cos), np.array([0]), self.CFG)
        out = O.inter_topk_adjust(logits, Tensor(cos), np.array([0]), self.CFG).data
        want = 30.0 * math.cos(math.acos(0.9) - 0.1)
        assert abs(out[0, 1] - want) < 1e-12
        assert abs(out[0, 1] / 30.0 - 0.93902013) < 5e-9
        # the two easier negatives and the target keep their plain logits
        np.testing.assert_allclose(out[0, [0, 2, 3]], 30.0 * cos[0, [0, 2, 3]], atol=1e-12)

    def test_tie_picks_lower_class_index(self):
        cos = np.array([[0.99, 0.5, 0.5, 0.1]])
        logits = Tensor(cos * 30.0)
        out = O.inter_topk_adjust(logits, Tensor(cos), np.array([0]), self.CFG).data
        eased = 30.0 * math.cos(math.acos(0.5) - 0.1)
        assert abs(out[0, 1] - eased) < 1e-12
        assert abs(out[0, 2] - 15.0) < 1e-12

    def test_target_never_selected(self):
        # target has the highest cosine but must not be eased
        cos = np.array([[0.99, 0.2, 0.1, 0.0]])
        logits = Tensor(cos * 30.0)
        out = O.inter_topk_adjust(logits, Tensor(cos), np.array([0]), self.CFG).data
        np.testing.assert_allclose(out[0, 0], 29.7, atol=1e-12)

    def test_topk_zero_is_identity(self):
        cfg = O.LossConfig(num_classes=4, embed_dim=4, subcenters=1, topk=0)
        cos = Tensor(np.array([[0.9, 0.5, 0.2, 0.0]]))
        logits = cos * 30.0
        out = O.inter_topk_adjust(logits, cos, np.array([0]), cfg)
        assert out is logits

    def test_k_selected_per_row(self, rng):
        cfg = O.LossConfig(num_classes=6, embed_dim=4, scale=1.0, margin=0.0, subcenters=1, topk=2, inter_margin=0.1)
        cos = np.clip(rng.uniform(-0.9, 0.9, size=(5, 6)), -1, 1)
        labels = np.array([0, 1, 2, 3, 4])
        logits = Tensor(cos.copy())
        out = O.inter_topk_adjust(logits, Tensor(cos), labels, cfg).data
        changed = np.abs(out - cos) > 1e-12
        assert (changed.sum(axis=1) == 2).all()
        assert not changed[np.arange(5), labels].any()


class TestFullLoss:
    def test_collapses_to_softmax_ce(self, rng):
        # K=1, margin 0, topk 0: the chain is exactly CE over scaled cosines
        cfg = O.LossConfig(num_classes=5, embed_dim=8, scale=30.0, margin=0.0, subcenters=1, topk=0)
        e = rng.normal(size=(6, 8))
        w = O.init_class_weights(cfg, seed=4)
        labels = rng.integers(0, 5, size=6)
        full = O.margin_loss(e, labels, w, cfg).data
        plain = O.cross_entropy(30.0 * (unit_rows(e) @ unit_rows(w.data[:, 0, :]).T), labels).data
        assert abs(full - plain) < 1e-12

    def test_margin_raises_loss(self, rng):
        e = rng.normal(size=(8, 6))
        labels = rng.integers(0, 4, size=8)
        base = dict(num_classes=4, embed_dim=6, subcenters=1, topk=0)
        w = O.init_class_weights(O.LossConfig(**base), seed=1)
        no_margin = O.margin_loss(e, labels, w, O.LossConfig(**base, margin=0.0)).data
        with_margin = O.margin_loss(e, labels, w, O.LossConfig(**base, margin=0.3)).data
        assert with_margin > no_margin

    def test_inter_penalty_raises_loss(self, rng):
        e = rng.normal(size=(8, 6))
        labels = rng.integers(0, 4, size=8)
        base = dict(num_classes=4, embed_dim=6, subcenters=1, margin=0.0)
        w = O.init_class_weights(O.LossConfig(**base, topk=0), seed=1)
        off = O.margin_loss(e, labels, w, O.LossConfig(**base, topk=0)).data
        on = O.margin_loss(e, labels, w, O.LossConfig(**base, topk=2, inter_margin=0.2)).data
        assert on > off

    def test_gradients_flow_everywhere(self, rng):
        cfg = O.LossConfig(num_classes=4, embed_dim=6, subcenters=2, topk=1)
        e = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
        w = O.init_class_weights(cfg, seed=2)
        loss = O.margin_loss(e, rng.integers(0, 4, size=5), w, cfg)
        loss.backward()
        assert e.grad is not None and np.isfinite(e.grad).all() and np.abs(e.grad).sum() > 0
        assert w.grad is not None and np.isfinite(w.grad).all() and np.abs(w.grad).sum() > 0

    def test_perfect_alignment_drives_loss_down(self):
        cfg = O.LossConfig(num_classes=3, embed_dim=3, subcenters=1, topk=0, margin=0.2)
        w = Tensor(np.eye(3)[:, None, :], requires_grad=True)
        aligned = O.margin_loss(np.eye(3) * 5.0, np.array([0, 1, 2]), w, cfg).data
        shuffled = O.margin_loss(np.eye(3) * 5.0, np.array([1, 2, 0]), w, cfg).data
        assert aligned < 0.01
        assert shuffled > 1.0


class TestWeights:
    def test_init_rows_are_unit(self):
        cfg = O.LossConfig(num_classes=7, embed_dim=5)
        w = O.init_class_weights(cfg, seed=3)
        np.testing.assert_allclose(np.linalg.norm(w.data, axis=2), 1.0, atol=1e-12)

    def test_init_deterministic(self):
        cfg = O.LossConfig(num_classes=7, embed_dim=5)
        np.testing.assert_array_equal(O.init_class_weights(cfg, 3).data, O.init_class_weights(cfg, 3).data)

    def test_renormalize(self, rng):
        cfg = O.LossConfig(num_classes=4, embed_dim=5, topk=2)
        w = O.init_class_weights(cfg, seed=0)
        w.data *= rng.uniform(0.5, 2.0, size=(4, 3, 1))
        O.renormalize_rows_(w)
        np.testing.assert_allclose(np.linalg.norm(w.data, axis=2), 1.0, atol=1e-12)

    def test_renormalize_rejects_collapsed_row(self):
        cfg = O.LossConfig(num_classes=4, embed_dim=5, topk=2)
        w = O.init_class_weights(cfg, seed=0)
        w.data[1, 2] = 0.0
        with pytest.raises(TrainingError, match="collapsed"):
            O.renormalize_rows_(w)
