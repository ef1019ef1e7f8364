"""Epoch-indexed loss weights.

Two weights ramp up geometrically (adversarial D, classification G) and two
ramp down (classification D, adversarial G); all are clamped to
``[floor, cap]``.  The stabilizer's running multipliers are applied on top.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import LossWeights


@dataclass(frozen=True)
class ScheduleConfig:
    rising_start: float = 0.01
    rising_factor: float = 10.0
    cap: float = 100.0
    falling_start: float = 100.0
    falling_factor: float = 0.1
    floor: float = 0.01
    lambda_l1: float = 100.0
    # fixed values that bypass the ramp, the clamp and any adjustment
    overrides: tuple[tuple[str, float], ...] = field(default=())

    def __post_init__(self):
        if not 0 < self.floor <= min(self.rising_start, self.falling_start):
            raise ValueError("floor must be positive and below both start values")
        if max(self.rising_start, self.falling_start) > self.cap:
            raise ValueError("start values must not exceed the cap")
        if self.rising_factor <= 0 or self.falling_factor <= 0:
            raise ValueError("schedule factors must be positive")
        for name, _ in self.overrides:
            if name not in LossWeights.NAMES:
                raise ValueError(f"unknown weight {name!r}")

    def clamp(self, x: float) -> float:
        return min(max(x, self.floor), self.cap)


def _override(cfg: ScheduleConfig, weights: LossWeights) -> LossWeights:
    return weights.replace(**dict(cfg.overrides)) if cfg.overrides else weights


def _ramp(cfg: ScheduleConfig, start: float, factor: float, epoch: int) -> float:
    """clamp(start * factor**epoch); the exponent stops growing once the clamp saturates."""
    if factor != 1.0:
        bound = cfg.cap if factor > 1.0 else cfg.floor
        epoch = min(epoch, math.ceil(abs(math.log(bound / start) / math.log(factor))) + 1)
    return cfg.clamp(start * factor ** epoch)


def lambda_at_epoch(cfg: ScheduleConfig, epoch: int) -> LossWeights:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    rising = _ramp(cfg, cfg.rising_start, cfg.rising_factor, epoch)
    falling = _ramp(cfg, cfg.falling_start, cfg.falling_factor, epoch)
    w = LossWeights(
        lambda_gan_d=rising,
        lambda_cls_d=falling,
        lambda_gan_g=falling,
        lambda_cls_g=rising,
        lambda_l1=cfg.lambda_l1,
    )
    return _override(cfg, w)


def apply_adjustment(weights: LossWeights, adj: LossWeights, cfg: ScheduleConfig | None = None) -> LossWeights:
    """Componentwise product with the stabilizer multipliers, re-clamped."""
    cfg = cfg or ScheduleConfig()
    if any(a <= 0 for a in adj.as_tuple()):
        raise ValueError("adjustment factors must be positive")
    fixed = dict(cfg.overrides)
    vals = {}
    for name, w, a in zip(LossWeights.NAMES, weights.as_tuple(), adj.as_tuple()):
        vals[name] = fixed[name] if name in fixed else (w if a == 1.0 else cfg.clamp(w * a))
    return LossWeights(**vals)


def unit_adjustment(cls_d: float = 1.0, cls_g: float = 1.0) -> LossWeights:
    return LossWeights(1.0, cls_d, 1.0, cls_g, 1.0)


def weights_for_epoch(cfg: ScheduleConfig, epoch: int, mult_cls_d: float = 1.0, mult_cls_g: float = 1.0) -> LossWeights:
    return apply_adjustment(lambda_at_epoch(cfg, epoch), unit_adjustment(mult_cls_d, mult_cls_g), cfg)
