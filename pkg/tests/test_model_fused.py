"""The fused batch objectives must match the composed single-loss operations."""

import numpy as np
import pytest

from agcd.model import (
    Model,
    ModelConfig,
    loss_cls_sup,
    loss_cls_unsup,
    loss_con_sup,
    loss_con_unsup,
    main_batch_objective,
    queried_batch_objective,
)

DIM, K = 12, 5


def setup(seed=0, size=10, n_labeled=4):
    rng = np.random.default_rng(seed)
    model = Model.initialize(ModelConfig(dim=DIM, num_classes=K), seed)
    v1 = rng.standard_normal((size, DIM))
    v1 /= np.linalg.norm(v1, axis=1, keepdims=True)
    v2 = rng.standard_normal((size, DIM))
    v2 /= np.linalg.norm(v2, axis=1, keepdims=True)
    lab_mask = np.zeros(size, dtype=bool)
    lab_mask[rng.choice(size, size=n_labeled, replace=False)] = True
    labels = rng.integers(0, 3, size=n_labeled)  # few classes so positives exist
    return model, v1, v2, lab_mask, labels


def composed_main(model, v1, v2, lab_mask, labels, lam, lambda_e, tau_t):
    loss, grads = 0.0, model.params.zeros_like()

    def add(val, g, w):
        nonlocal loss
        loss += w * val
        for t, src in zip(grads.arrays(), g.arrays()):
            t += w * src

    add(*loss_con_unsup(model, v1, v2), 1.0 - lam)
    add(*loss_cls_unsup(model, v1, v2, lambda_e, tau_t), 1.0)
    if lab_mask.any():
        add(*loss_cls_sup(model, v1[lab_mask], labels), 1.0)
        uniq, counts = np.unique(labels, return_counts=True)
        if (counts >= 2).any():
            add(*loss_con_sup(model, v1[lab_mask], v2[lab_mask], labels), lam)
    return loss, grads


@pytest.mark.parametrize("seed", range(5))
def test_main_objective_matches_composed_losses(seed):
    model, v1, v2, lab_mask, labels = setup(seed)
    lam, lambda_e, tau_t = 0.35, 1.7, 0.05
    fused_loss, fused_grads = main_batch_objective(model, v1, v2, lab_mask, labels, lam, lambda_e, tau_t)
    ref_loss, ref_grads = composed_main(model, v1, v2, lab_mask, labels, lam, lambda_e, tau_t)
    assert fused_loss == pytest.approx(ref_loss, rel=1e-12)
    for a, b in zip(fused_grads.arrays(), ref_grads.arrays()):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_main_objective_without_labeled_rows():
    model, v1, v2, _, _ = setup(3)
    lab_mask = np.zeros(v1.shape[0], dtype=bool)
    labels = np.empty(0, dtype=np.int64)
    fused_loss, fused_grads = main_batch_objective(model, v1, v2, lab_mask, labels, 0.35, 1.0, 0.04)
    ref_loss, ref_grads = composed_main(model, v1, v2, lab_mask, labels, 0.35, 1.0, 0.04)
    assert fused_loss == pytest.approx(ref_loss, rel=1e-12)
    for a, b in zip(fused_grads.arrays(), ref_grads.arrays()):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("labels", [[0, 0, 1, 1], [0, 1, 2, 3]])
def test_queried_objective_matches_composed_losses(labels):
    model, v1, v2, _, _ = setup(7, size=4)
    labels = np.asarray(labels)
    lam = 0.35
    fused_loss, fused_grads = queried_batch_objective(model, v1, v2, labels, lam)

    ref_loss, ref_grads = loss_cls_sup(model, v1, labels)
    uniq, counts = np.unique(labels, return_counts=True)
    if (counts >= 2).any():
        val, g = loss_con_sup(model, v1, v2, labels)
        ref_loss += lam * val
        for t, src in zip(ref_grads.arrays(), g.arrays()):
            t += lam * src
    assert fused_loss == pytest.approx(ref_loss, rel=1e-12)
    for a, b in zip(fused_grads.arrays(), ref_grads.arrays()):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)
