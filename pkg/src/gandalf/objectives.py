"""Adversarial, reconstruction and classification losses and their weighted sums.

Everything here is written as a minimisation: log-likelihood terms are
negated and ``log`` arguments are clamped to at least ``EPS``.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .core import LossWeights
from .errors import LabelError, NumericError, ShapeError

EPS = 1e-7


def _finite(*tensors: torch.Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericError("non-finite discriminator scores")


def _log_sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(torch.sigmoid(x), min=EPS))


def _log_one_minus_sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(1.0 - torch.sigmoid(x), min=EPS))


def cgan_d_loss(patch_real: torch.Tensor, patch_fake: torch.Tensor) -> torch.Tensor:
    real, fake = cgan_d_terms(patch_real, patch_fake)
    return real + fake


def cgan_d_terms(patch_real: torch.Tensor, patch_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    _finite(patch_real, patch_fake)
    return -_log_sigmoid(patch_real).mean(), -_log_one_minus_sigmoid(patch_fake).mean()


def cgan_g_adv_loss(patch_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss, -log D(x, G(x))."""
    _finite(patch_fake)
    return -_log_sigmoid(patch_fake).mean()


def l1_loss(target_pet: torch.Tensor, generated_pet: torch.Tensor) -> torch.Tensor:
    if target_pet.shape != generated_pet.shape:
        raise ShapeError(f"L1 operands differ: {tuple(target_pet.shape)} vs {tuple(generated_pet.shape)}")
    return (target_pet - generated_pet).abs().mean()


def cls_loss(class_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    n_classes = class_logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    _finite(class_logits)
    return F.cross_entropy(class_logits, labels)


@dataclass
class DLossBreakdown:
    adv_real: torch.Tensor
    adv_fake: torch.Tensor
    cls_real: torch.Tensor
    total: torch.Tensor


@dataclass
class GLossBreakdown:
    adv: torch.Tensor
    cls_fake: torch.Tensor
    l1: torch.Tensor
    total: torch.Tensor


def d_total(weights: LossWeights, patch_real, patch_fake, cls_logits_real, labels) -> DLossBreakdown:
    """Discriminator objective; the class term only ever sees real (MRI, PET) pairs."""
    adv_real, adv_fake = cgan_d_terms(patch_real, patch_fake)
    cls_real = cls_loss(cls_logits_real, labels)
    total = weights.lambda_gan_d * (adv_real + adv_fake) + weights.lambda_cls_d * cls_real
    return DLossBreakdown(adv_real, adv_fake, cls_real, total)


def g_total(weights: LossWeights, patch_fake, cls_logits_fake, labels, target_pet, generated_pet) -> GLossBreakdown:
    """Generator objective.

    ``patch_fake`` and ``cls_logits_fake`` must come from the discriminator
    applied to (real MRI, generated PET) with its parameters frozen, so the
    gradient reaches the generator through both heads.
    """
    adv = cgan_g_adv_loss(patch_fake)
    cls_fake = cls_loss(cls_logits_fake, labels)
    l1 = l1_loss(target_pet, generated_pet)
    total = weights.lambda_gan_g * adv + weights.lambda_cls_g * cls_fake + weights.lambda_l1 * l1
    return GLossBreakdown(adv, cls_fake, l1, total)
