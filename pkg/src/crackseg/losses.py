"""Segmentation losses and their analytic gradients w.r.t. the probability map.

The supervised branch combines pixelwise binary cross-entropy against the
(possibly noisy) human annotation with a soft Dice term weighted by beta; the
guidance branch adds a Dice term against the mixture-model pseudo-label,
weighted by lambda. All gradients are exact, so they can be fed straight into
the hand-written backward pass of the pixel classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DICE_EPS = 1e-7
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossBreakdown:
    l_bce: float
    l_dice: float
    l_dg: float
    l_sup: float
    l_total: float


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def dice_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Soft Dice: 1 - 2*sum(X*Y) / (sum(X) + sum(Y) + eps).

    Target may be a binary mask or a soft map in [0, 1]. Returns the scalar
    loss and its gradient w.r.t. every prediction pixel.
    """
    _check_same_shape(pred, target, "dice_loss")
    y = np.asarray(target, dtype=np.float64)
    inter = float((pred * y).sum())
    denom = float(pred.sum() + y.sum()) + DICE_EPS
    loss = 1.0 - 2.0 * inter / denom
    grad = (2.0 * inter - 2.0 * y * denom) / (denom * denom)
    return loss, grad


def bce_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    _check_same_shape(pred, target, "bce_loss")
    q = np.asarray(target, dtype=np.float64)
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = float(-(q * np.log(p) + (1.0 - q) * np.log(1.0 - p)).mean())
    inside = (pred > BCE_CLAMP) & (pred < 1.0 - BCE_CLAMP)
    grad = np.where(inside, (-q / p + (1.0 - q) / (1.0 - p)) / n, 0.0)
    return loss, grad


def supervised_loss(pred: np.ndarray, noisy_target: np.ndarray, beta: float) -> float:
    """BCE plus beta-weighted Dice against the human annotation."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    l_bce, _ = bce_loss(pred, noisy_target)
    l_dice, _ = dice_loss(pred, noisy_target)
    return l_bce + beta * l_dice


def total_loss(pred: np.ndarray, noisy_target: np.ndarray,
               pseudo_target: np.ndarray | None, beta: float,
               lam: float) -> tuple[LossBreakdown, np.ndarray]:
    """Joint objective: supervised branch plus lambda-weighted guidance Dice.

    pseudo_target may be None (warmup), in which case l_dg is 0 and the total
    equals the supervised loss. The returned gradient is the weighted sum of
    the term gradients.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    if lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    _check_same_shape(pred, noisy_target, "total_loss")
    if pseudo_target is not None:
        _check_same_shape(pred, pseudo_target, "total_loss")

    l_bce, g_bce = bce_loss(pred, noisy_target)
    l_dice, g_dice = dice_loss(pred, noisy_target)
    l_sup = l_bce + beta * l_dice
    grad = g_bce + beta * g_dice

    l_dg = 0.0
    if pseudo_target is not None:
        l_dg, g_dg = dice_loss(pred, pseudo_target)
        if lam != 0.0:
            grad = grad + lam * g_dg
    l_total = l_sup + lam * l_dg
    return LossBreakdown(l_bce, l_dice, l_dg, l_sup, l_total), grad
