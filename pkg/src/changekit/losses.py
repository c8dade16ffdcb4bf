"""Co-training objective: main CE+Dice, confidence hard mask, masked
auxiliary CE over the semantic score map, and the weighted total."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .types import IGNORE_LABEL


@dataclass
class LossConfig:
    tau: float = 0.80
    lambda_aux: float = 0.4
    ce_weight: float = 0.5
    dice_weight: float = 0.5
    dice_smooth: float = 1.0
    epsilon: float = 1e-6
    ignore_index: int = IGNORE_LABEL

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.lambda_aux < 0:
            raise ValueError(f"lambda_aux must be >= 0, got {self.lambda_aux}")


def _batched(logits: torch.Tensor, label: torch.Tensor):
    if logits.ndim == 3:
        logits = logits.unsqueeze(0)
    if label.ndim == 2:
        label = label.unsqueeze(0)
    if logits.shape[0] != label.shape[0] or logits.shape[2:] != label.shape[1:]:
        raise ValueError(
            f"logits {tuple(logits.shape)} and label {tuple(label.shape)} disagree"
        )
    return logits, label


def main_loss(logits: torch.Tensor, label: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Weighted sum of masked cross-entropy and soft Dice.

    CE averages -log softmax at the true class over non-ignored pixels.
    Dice is computed per class actually present in the (non-ignored) label
    and averaged; ignored pixels are excluded from every sum.
    """
    logits, label = _batched(logits, label)
    valid = label != cfg.ignore_index
    if not bool(valid.any()):
        warnings.warn("main_loss: every pixel is ignored; returning 0", stacklevel=2)
        return logits.sum() * 0.0

    ce = F.cross_entropy(logits, label.clamp(max=logits.shape[1] - 1).long(),
                         reduction="none")
    ce = (ce * valid).sum() / valid.sum()

    probs = torch.softmax(logits, dim=1)
    present = torch.unique(label[valid])
    dice_terms = []
    for k in present.tolist():
        y_k = ((label == k) & valid).to(probs.dtype)
        p_k = probs[:, k] * valid.to(probs.dtype)
        inter = (p_k * y_k).sum()
        denom = p_k.sum() + y_k.sum()
        dice_terms.append((2.0 * inter + cfg.dice_smooth) / (denom + cfg.dice_smooth))
    dice = 1.0 - torch.stack(dice_terms).mean()

    return cfg.ce_weight * ce + cfg.dice_weight * dice


def hard_mask_from_probs(probs: torch.Tensor, label: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Pixels whose top-class probability is strictly below tau (and that
    carry a real label) are marked hard."""
    probs, label = _batched(probs, label)
    p_max = probs.max(dim=1).values
    return (p_max < cfg.tau) & (label != cfg.ignore_index)


def hard_mask(logits: torch.Tensor, label: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Confidence-based hard-pixel selection from detached prediction logits."""
    logits, label = _batched(logits, label)
    probs = torch.softmax(logits.detach(), dim=1)
    return hard_mask_from_probs(probs, label, cfg)


def aux_loss(scores: torch.Tensor, label: torch.Tensor, mask: torch.Tensor,
             cfg: LossConfig) -> torch.Tensor:
    """Cross-entropy on the score map, restricted to the hard mask.

    Normalized by the masked-pixel count stabilized by epsilon, so an
    empty mask yields exactly zero.
    """
    scores, label = _batched(scores, label)
    if mask.ndim == 2:
        mask = mask.unsqueeze(0)
    mask = mask & (label != cfg.ignore_index)
    ce = F.cross_entropy(
        scores, label.long(), reduction="none", ignore_index=cfg.ignore_index
    )
    total = (ce * mask).sum()
    return total / (mask.sum() + cfg.epsilon)


def total_loss(main: torch.Tensor, aux: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    return main + cfg.lambda_aux * aux
