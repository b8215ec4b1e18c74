"""
Loss functions for pre-training and test-time adaptation.

All losses take class-probability tensors of shape (N, K, D, H, W).
"""

import logging
import math
from typing import Optional, Sequence

import torch

from ..exceptions import DegenerateInputError, InvalidArgumentError
from ..models.config_models import LossWeights

logger = logging.getLogger(__name__)

TINY = 1e-12


def one_hot(target: torch.Tensor, num_classes: int) -> torch.Tensor:
    """(N, D, H, W) class indices to (N, K, D, H, W) floats."""
    if target.min() < 0 or target.max() >= num_classes:
        raise InvalidArgumentError(f"Target classes must lie in [0, {num_classes})")
    encoded = torch.nn.functional.one_hot(target.long(), num_classes)
    return encoded.movedim(-1, 1).to(torch.get_default_dtype())


def soft_dice_loss(probs: torch.Tensor, reference: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """1 - mean over batch and classes of (2 sum p r + eps) / (sum p + sum r + eps)."""
    dims = tuple(range(2, probs.ndim))
    inter = (probs * reference).sum(dim=dims)
    denom = probs.sum(dim=dims) + reference.sum(dim=dims)
    return 1.0 - ((2.0 * inter + eps) / (denom + eps)).mean()


def cross_entropy(probs: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """Mean per-voxel cross-entropy of probabilities against one-hot targets."""
    return -(reference * torch.log(probs.clamp_min(TINY))).sum(dim=1).mean()


def supervised_loss(
    probs: torch.Tensor,
    target: torch.Tensor,
    weights: LossWeights = LossWeights(),
    eps: float = 1e-5,
) -> torch.Tensor:
    """
    Weighted cross-entropy plus soft Dice loss.

    Args:
        probs: (N, K, D, H, W) class probabilities
        target: (N, D, H, W) class indices
        weights: Weights of the two terms
        eps: Smoothing constant of the Dice term

    Returns:
        Non-negative scalar
    """
    if probs.ndim != 5 or target.shape != probs.shape[:1] + probs.shape[2:]:
        raise InvalidArgumentError(
            f"Prediction {tuple(probs.shape)} and target {tuple(target.shape)} shapes do not match"
        )
    reference = one_hot(target, probs.shape[1]).to(probs.dtype)
    loss = probs.new_zeros(())
    if weights.ce:
        loss = loss + weights.ce * cross_entropy(probs, reference)
    if weights.dice:
        loss = loss + weights.dice * soft_dice_loss(probs, reference, eps)
    return loss


def _broadcast_mask(mask: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    mask = mask.to(torch.bool)
    while mask.ndim < like.ndim:
        mask = mask.unsqueeze(0) if mask.ndim == like.ndim - 2 else mask.unsqueeze(1)
    try:
        return mask.expand_as(like)
    except RuntimeError as e:
        raise InvalidArgumentError(
            f"Mask {tuple(mask.shape)} does not broadcast to predictions {tuple(like.shape)}"
        ) from e


def subset_softmax(logits: torch.Tensor, classes: Optional[Sequence[int]] = None) -> torch.Tensor:
    """
    Softmax over dim 1 in which only the logits of classes carry gradient.

    Logits of the other classes enter the normalization as constants, so
    any loss on the result leaves them with exactly zero gradient.
    """
    if classes is not None:
        keep = torch.zeros(logits.shape[1], dtype=torch.bool, device=logits.device)
        keep[list(classes)] = True
        keep = keep.view(1, -1, *([1] * (logits.ndim - 2)))
        logits = torch.where(keep, logits, logits.detach())
    return torch.softmax(logits, dim=1)


def consistency_dice_loss(
    y_a: torch.Tensor,
    y_b: torch.Tensor,
    mask: torch.Tensor,
    d: int = 2,
    eps: float = 1e-8,
    classes: Optional[Sequence[int]] = None,
) -> torch.Tensor:
    """
    Masked soft-Dice disagreement between two probability maps.

    loss = 1 - mean_{n, c in classes} (sum_m 2 yA yB + eps) / (sum_m yA^d + yB^d + eps)
    where sums run over voxels in the mask only.

    Args:
        y_a: (N, K, D, H, W) probabilities of branch A
        y_b: Probabilities of branch B, same shape
        mask: Boolean (D, H, W), (N, D, H, W) or (N, 1, D, H, W) validity
        d: Denominator exponent (2 has zero loss whenever yA == yB)
        eps: Stability constant
        classes: Channels to include (all when None)

    Returns:
        Scalar in [0, 1 + eps)
    """
    if y_a.shape != y_b.shape:
        raise InvalidArgumentError(f"Branch shapes differ: {tuple(y_a.shape)} vs {tuple(y_b.shape)}")
    if d not in (1, 2):
        raise InvalidArgumentError(f"Loss exponent must be 1 or 2, got {d}")
    if classes is not None:
        index = torch.as_tensor(list(classes), dtype=torch.long, device=y_a.device)
        y_a = y_a.index_select(1, index)
        y_b = y_b.index_select(1, index)

    valid = _broadcast_mask(mask, y_a)
    if not bool(valid.any()):
        raise DegenerateInputError("Consistency mask is empty: no voxel to supervise")

    zero = y_a.new_zeros(())
    dims = tuple(range(2, y_a.ndim))
    num = torch.where(valid, 2.0 * y_a * y_b, zero).sum(dim=dims) + eps
    den = torch.where(valid, y_a**d + y_b**d, zero).sum(dim=dims) + eps
    return 1.0 - (num / den).mean()


def entropy_loss(probs: torch.Tensor) -> torch.Tensor:
    """Mean per-voxel Shannon entropy (nats) of class probabilities."""
    return -(probs * torch.log(probs.clamp_min(TINY))).sum(dim=1).mean()


def max_entropy(num_classes: int) -> float:
    """Entropy of the uniform distribution over num_classes."""
    return math.log(num_classes)
