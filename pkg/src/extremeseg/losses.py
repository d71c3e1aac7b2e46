"""Segmentation losses restricted to annotated voxels.

Every loss returns ``(value, grad)`` with ``grad`` the derivative with respect
to the probability map, zero on unlabeled voxels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import SupervisionMask
from .volume import Volume

EPS = 1e-7
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossReport:
    total: float
    ce: float
    dice: float
    focal: float
    grad: np.ndarray


def _prepare(prob, mask: SupervisionMask):
    p = (prob.data if isinstance(prob, Volume) else np.asarray(prob)).astype(np.float64)
    if p.shape != mask.shape:
        raise ValueError(f"probability shape {p.shape} does not match mask shape {mask.shape}")
    ann = mask.annotated
    if not ann.any():
        raise ValueError("empty supervision")
    return p, ann, mask.fg[ann].astype(np.float64)


def _scatter(shape, ann, values):
    g = np.zeros(shape)
    g[ann] = values
    return g


def partial_cross_entropy(prob, mask: SupervisionMask):
    p, ann, y = _prepare(prob, mask)
    raw = p[ann]
    pa = np.clip(raw, EPS, 1 - EPS)
    value = -np.mean(y * np.log(pa) + (1 - y) * np.log(1 - pa))
    g = (-y / pa + (1 - y) / (1 - pa)) / len(pa)
    g[(raw < EPS) | (raw > 1 - EPS)] = 0.0
    return float(value), _scatter(p.shape, ann, g)


def partial_soft_dice(prob, mask: SupervisionMask):
    p, ann, y = _prepare(prob, mask)
    pa = p[ann]
    inter = np.sum(pa * y)
    denom = np.sum(pa) + np.sum(y) + DICE_SMOOTH
    num = 2 * inter + DICE_SMOOTH
    value = 1.0 - num / denom
    g = -(2 * y * denom - num) / denom ** 2
    return float(value), _scatter(p.shape, ann, g)


def partial_class_balanced_focal(prob, mask: SupervisionMask, gamma_focal: float = 2.0):
    """Focal loss with per-class weights |A| / (2 |A_c|) over the annotated set A."""
    if gamma_focal < 0:
        raise ValueError(f"gamma_focal must be >= 0, got {gamma_focal}")
    p, ann, y = _prepare(prob, mask)
    raw = p[ann]
    pa = np.clip(raw, EPS, 1 - EPS)
    n = len(pa)
    n_fg = y.sum()
    n_bg = n - n_fg
    alpha = np.where(y == 1,
                     n / (2 * n_fg) if n_fg else 0.0,
                     n / (2 * n_bg) if n_bg else 0.0)
    pt = np.where(y == 1, pa, 1 - pa)
    log_pt = np.log(pt)
    mod = (1 - pt) ** gamma_focal
    value = np.sum(alpha * mod * -log_pt) / n
    if gamma_focal == 0:
        dmod = np.zeros_like(pt)
    else:
        dmod = gamma_focal * (1 - pt) ** (gamma_focal - 1)
    dpt = alpha * (dmod * log_pt - mod / pt) / n
    g = np.where(y == 1, dpt, -dpt)
    g[(raw < EPS) | (raw > 1 - EPS)] = 0.0
    return float(value), _scatter(p.shape, ann, g)


def combined_loss(prob, mask: SupervisionMask, gamma_focal: float = 2.0) -> LossReport:
    """Dice + cross-entropy + class-balanced focal."""
    ce, g_ce = partial_cross_entropy(prob, mask)
    dice, g_dice = partial_soft_dice(prob, mask)
    focal, g_focal = partial_class_balanced_focal(prob, mask, gamma_focal)
    return LossReport(ce + dice + focal, ce, dice, focal, g_ce + g_dice + g_focal)
