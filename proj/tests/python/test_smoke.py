"""Smoke tests for the softmorph Python module."""

import math

import numpy as np
import pytest

import softmorph as sm


def test_sigmoid_basics():
    out = sm.sigmoid(np.zeros((4, 4)))
    assert out.shape == (4, 4)
    assert np.all(out == 0.5)
    saturated = sm.sigmoid(np.full((3, 3), 20.0))
    assert np.all(saturated > 1 - 1e-8)
    assert np.all(saturated < 1)


def test_sobel_constant_mask_is_eps_floor():
    edges = sm.sobel_edge_magnitude(np.full((5, 5), 0.7))
    assert edges == pytest.approx(np.full((5, 5), 1e-6), rel=1e-6)


def test_feature_orderings_on_equal_area_pair():
    pair = sm.equal_area_pair(seed=11)
    disc = sm.features_raw(pair["disc_mask"], pair["disc_image"])
    star = sm.features_raw(pair["star_mask"], pair["star_image"])
    assert star["roughness_raw"] > disc["roughness_raw"]
    assert star["compactness"] < disc["compactness"]
    assert star["texture_raw"] > disc["texture_raw"]


def test_prior_roundtrip_and_score():
    u = sm.prior_logits_from_weights([0.15, 0.35, 0.25, 0.25])
    w = sm.softmax_weights(u)
    assert w == pytest.approx([0.15, 0.35, 0.25, 0.25], abs=1e-12)
    assert abs(sum(u)) < 1e-12  # zero-mean gauge
    phi = sm.composite_score(0.5, 1.0, 1.0, 0.5, u)
    assert phi == pytest.approx(0.55, abs=1e-12)


def test_loss_composition_example():
    out = sm.compose_loss(0.2, 0.4, 0.09, 0.0, 1.0, w_seg=0.9, w_cls=0.1,
                          alpha=0.17, lambda_nt=0.5, beta=0.001)
    assert out["total"] == pytest.approx(0.2363, abs=1e-12)
    baseline = sm.compose_loss(0.2, 0.4, 0.09, 0.3, 1.0, alpha=0.0, beta=0.0)
    assert baseline["total"] == 0.9 * 0.2 + 0.1 * 0.4


def test_loss_gradients_shapes_and_seg_path():
    rng = np.random.default_rng(3)
    logits = np.zeros((16, 16))
    image = rng.uniform(size=(16, 16))
    mask_gt = (rng.uniform(size=(16, 16)) < 0.3).astype(float)
    u = sm.prior_logits_from_weights([0.15, 0.35, 0.25, 0.25])
    grads = sm.loss_gradients(logits, 0.0, image, mask_gt, 1, u,
                              w_seg=1.0, w_cls=0.0, alpha=0.0, beta=0.0)
    assert grads["wrt_logits"].shape == (16, 16)
    # with only the segmentation term live, d/ds = (sigmoid(s) - t) / n
    expected = (0.5 - mask_gt) / 256.0
    assert grads["wrt_logits"] == pytest.approx(expected, abs=1e-12)
    assert grads["wrt_malig_logit"] == 0.0


def test_statistics():
    assert sm.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    w = sm.wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5)
    assert w["p_value"] == pytest.approx(0.0625, abs=1e-12)
    assert w["method"] == "exact"
    pred = np.zeros((6, 6))
    pred[:3, :3] = 1.0
    assert sm.dice(pred, pred) == 1.0
    with pytest.raises(ValueError):
        sm.auc([0.5, 0.6], [1, 1])


def test_gradcheck_passes():
    cases = sm.gradcheck(size=12, seed=7, probes=24)
    assert len(cases) == 30  # 10 scalars x 3 parameter groups
    assert all(c["passed"] for c in cases)


def test_lesion_generation_deterministic():
    img_a, mask_a, label_a = sm.generate_lesion("malignant_star", seed=9, size=32)
    img_b, mask_b, label_b = sm.generate_lesion("malignant_star", seed=9, size=32)
    assert label_a == label_b == 1
    assert np.array_equal(img_a, img_b)
    assert np.array_equal(mask_a, mask_b)
    assert set(np.unique(mask_a)) <= {0.0, 1.0}
