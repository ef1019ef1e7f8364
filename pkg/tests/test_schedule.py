from __future__ import annotations

import pytest

from gandalf.core import LossWeights
from gandalf.schedule import ScheduleConfig, apply_adjustment, lambda_at_epoch, unit_adjustment, weights_for_epoch

CFG = ScheduleConfig()


def _four(w):
    return (w.lambda_gan_d, w.lambda_cls_d, w.lambda_gan_g, w.lambda_cls_g)


def test_named_epochs():
    assert _four(lambda_at_epoch(CFG, 0)) == pytest.approx((0.01, 100, 100, 0.01), rel=1e-12)
    assert _four(lambda_at_epoch(CFG, 1)) == pytest.approx((0.1, 10, 10, 0.1), rel=1e-12)
    assert _four(lambda_at_epoch(CFG, 2)) == pytest.approx((1, 1, 1, 1), rel=1e-12)
    assert _four(lambda_at_epoch(CFG, 10)) == (100, 0.01, 0.01, 100)
    assert lambda_at_epoch(CFG, 7).lambda_l1 == 100


def test_huge_epoch_stays_clamped():
    assert _four(lambda_at_epoch(CFG, 10**6)) == (100, 0.01, 0.01, 100)


def test_negative_epoch_rejected():
    with pytest.raises(ValueError):
        lambda_at_epoch(CFG, -1)


def test_overrides_bypass_ramp():
    cfg = ScheduleConfig(overrides=(("lambda_gan_d", 0.0), ("lambda_cls_g", 0.0)))
    w = lambda_at_epoch(cfg, 3)
    assert w.lambda_gan_d == 0.0 and w.lambda_cls_g == 0.0
    assert w.lambda_cls_d == pytest.approx(0.1)
    assert weights_for_epoch(cfg, 3, 0.5, 0.5).lambda_cls_g == 0.0


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        ScheduleConfig(floor=0.0)
    with pytest.raises(ValueError):
        ScheduleConfig(overrides=(("lambda_bogus", 1.0),))


def test_adjustment_examples():
    w = LossWeights(1, 1, 1, 1, 100)
    assert apply_adjustment(w, unit_adjustment()) == w
    assert apply_adjustment(w, unit_adjustment(0.5, 1.0)).lambda_cls_d == 0.5
    w2 = w.replace(lambda_cls_d=0.015)
    assert apply_adjustment(w2, unit_adjustment(0.5)).lambda_cls_d == 0.01
    with pytest.raises(ValueError):
        apply_adjustment(w, unit_adjustment(0.0))


def test_weights_for_epoch_uses_multipliers():
    w = weights_for_epoch(CFG, 2, 0.25, 0.5)
    assert w.lambda_cls_d == pytest.approx(0.25)
    assert w.lambda_cls_g == pytest.approx(0.5)
    assert w.lambda_gan_d == pytest.approx(1.0)
