"""Compound segmentation loss: soft Dice plus weighted binary cross-entropy,
L = L_dice + lambda * L_bce."""

import torch
import torch.nn.functional as F

from .errors import ShapeMismatchError

EPS = 1e-6  # soft-Dice smoothing, numerator and denominator


def soft_dice(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Differentiable Dice overlap of a probability volume vs a binary
    target, smoothed for empty-target stability."""
    inter = (pred * target).sum()
    return (2.0 * inter + EPS) / (pred.sum() + target.sum() + EPS)


def compound_loss(pred: torch.Tensor, target: torch.Tensor,
                  lam: float = 1.0) -> torch.Tensor:
    """L_dice + lam * L_bce; pred must be probabilities in (0, 1)."""
    if pred.shape != target.shape:
        raise ShapeMismatchError(
            f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    l_dice = 1.0 - soft_dice(pred, target)
    if lam == 0:
        return l_dice
    l_bce = F.binary_cross_entropy(pred, target)
    return l_dice + lam * l_bce


def binary_dice(pred: torch.Tensor, target: torch.Tensor,
                threshold: float = 0.5) -> float:
    """Hard Dice of the thresholded prediction (both-empty counts as 1)."""
    p = pred >= threshold
    t = target >= 0.5
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom
