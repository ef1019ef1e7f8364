from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from gandalf.core import LossWeights
from gandalf.errors import LabelError, NumericError, ShapeError
from gandalf.objectives import cgan_d_loss, cgan_g_adv_loss, cls_loss, d_total, g_total, l1_loss


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_d_loss_midpoint():
    z = torch.zeros(1, 1, 2, 2, 2)
    assert float(cgan_d_loss(z, z)) == pytest.approx(2 * math.log(2), abs=1e-6)


def test_d_loss_perfect_discriminator():
    assert float(cgan_d_loss(torch.full((4,), 50.0), torch.full((4,), -50.0))) == pytest.approx(0.0, abs=1e-6)


def test_d_loss_elementwise_oracle():
    rng = np.random.default_rng(0)
    r, f = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    want = np.mean(-np.log(_sig(r))) + np.mean(-np.log(1 - _sig(f)))
    got = float(cgan_d_loss(torch.tensor(r), torch.tensor(f)))
    assert got == pytest.approx(want, rel=1e-9)


def test_g_adv_examples():
    assert float(cgan_g_adv_loss(torch.zeros(3))) == pytest.approx(math.log(2), abs=1e-7)
    assert float(cgan_g_adv_loss(torch.full((3,), 40.0))) == pytest.approx(0.0, abs=1e-6)
    f = np.random.default_rng(1).normal(size=(3, 3))
    assert float(cgan_g_adv_loss(torch.tensor(f))) == pytest.approx(np.mean(-np.log(_sig(f))), rel=1e-9)


def test_saturated_scores_stay_finite():
    assert math.isfinite(float(cgan_d_loss(torch.full((2,), -1e4), torch.full((2,), 1e4))))


def test_nonfinite_scores_raise():
    with pytest.raises(NumericError):
        cgan_d_loss(torch.tensor([float("nan")]), torch.zeros(1))
    with pytest.raises(NumericError):
        cgan_g_adv_loss(torch.tensor([float("inf")]))


def test_l1_examples():
    y = torch.rand(2, 3, 3)
    assert float(l1_loss(y, y)) == 0.0
    assert float(l1_loss(torch.ones(2, 2), torch.zeros(2, 2))) == 1.0
    a, b = np.random.default_rng(2).random((2, 5, 5)), np.random.default_rng(3).random((2, 5, 5))
    assert float(l1_loss(torch.tensor(a), torch.tensor(b))) == pytest.approx(np.abs(a - b).mean(), rel=1e-12)
    with pytest.raises(ShapeError):
        l1_loss(torch.zeros(2, 2), torch.zeros(2, 3))


def test_cls_examples():
    assert float(cls_loss(torch.zeros(4, 3), torch.tensor([0, 1, 2, 0]))) == pytest.approx(math.log(3), abs=1e-6)
    logits = torch.tensor([[30.0, 0.0, 0.0]])
    assert float(cls_loss(logits, torch.tensor([0]))) == pytest.approx(0.0, abs=1e-6)
    rng = np.random.default_rng(4)
    lg, lab = rng.normal(size=(6, 4)), rng.integers(0, 4, 6)
    p = np.exp(lg) / np.exp(lg).sum(1, keepdims=True)
    want = -np.mean(np.log(p[np.arange(6), lab]))
    assert float(cls_loss(torch.tensor(lg), torch.tensor(lab))) == pytest.approx(want, rel=1e-9)
    with pytest.raises(LabelError):
        cls_loss(torch.zeros(2, 3), torch.tensor([0, 3]))


def test_d_total_weightings():
    z = torch.zeros(1, 1, 2, 2, 2)
    logits, labels = torch.zeros(2, 3), torch.tensor([0, 1])
    adv_only = d_total(LossWeights(1, 0, 1, 1, 1), z, z, logits, labels).total
    cls_only = d_total(LossWeights(0, 1, 1, 1, 1), z, z, logits, labels).total
    assert float(adv_only) == pytest.approx(2 * math.log(2), abs=1e-6)
    assert float(cls_only) == pytest.approx(math.log(3), abs=1e-6)
    first = d_total(LossWeights(0.01, 100, 100, 0.01, 100), z, z, logits, labels)
    assert float(first.total) == pytest.approx(0.01 * 2 * math.log(2) + 100 * math.log(3), rel=1e-6)
    # with the components rounded to four places the same weighting gives 109.8739
    assert 0.01 * 1.3863 + 100 * 1.0986 == pytest.approx(109.8739, abs=5e-5)


def test_g_total_weightings():
    rng = np.random.default_rng(5)
    patch = torch.tensor(rng.normal(size=(2, 1, 2, 2, 2)))
    logits = torch.tensor(rng.normal(size=(2, 4)))
    labels = torch.tensor([1, 3])
    pet, fake = torch.tensor(rng.random((2, 2, 3, 3, 3))), torch.tensor(rng.random((2, 2, 3, 3, 3)))
    only_l1 = g_total(LossWeights(1, 1, 0, 0, 1), patch, logits, labels, pet, fake)
    assert float(only_l1.total) == pytest.approx(float(l1_loss(pet, fake)), rel=1e-12)

    w = LossWeights(0.3, 0.7, 2.5, 0.4, 11.0)
    g = g_total(w, patch, logits, labels, pet, fake)
    want = 2.5 * float(g.adv) + 0.4 * float(g.cls_fake) + 11.0 * float(g.l1)
    assert float(g.total) == pytest.approx(want, rel=1e-12)

    early = g_total(LossWeights(0.01, 100, 100, 0.01, 100), torch.zeros(1, 1, 2, 2, 2), torch.zeros(1, 4),
                    torch.tensor([0]), torch.zeros(1, 2, 2, 2, 2), torch.full((1, 2, 2, 2, 2), 0.001))
    assert 100 * float(early.adv) > 0.01 * float(early.cls_fake) + 100 * float(early.l1)
