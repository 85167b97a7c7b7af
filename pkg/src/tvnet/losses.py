"""Edge BCE, boundary-weighted BCE / IoU and the deep-supervision objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .model import PredictionSet, resize_to

POOL_KERNEL = 31


def boundary_weights(gt: torch.Tensor, kernel: int = POOL_KERNEL) -> torch.Tensor:
    """``1 + 5 |mean_pool(gt) - gt|``: heavier near object boundaries."""
    pooled = F.avg_pool2d(gt, kernel, stride=1, padding=kernel // 2, count_include_pad=True)
    return 1.0 + 5.0 * (pooled - gt).abs()


def _check_pair(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if logits.shape[-2:] != gt.shape[-2:]:
        logits = resize_to(logits, gt.shape[-2:])
    if logits.shape != gt.shape:
        raise ValueError(f"logits {tuple(logits.shape)} vs gt {tuple(gt.shape)}")
    return logits


def edge_bce(edge_logits: torch.Tensor, edge_gt: torch.Tensor) -> torch.Tensor:
    if edge_logits.shape != edge_gt.shape:
        raise ValueError(f"edge logits {tuple(edge_logits.shape)} vs gt {tuple(edge_gt.shape)}")
    if not torch.all((edge_gt == 0) | (edge_gt == 1)):
        raise ValueError("edge ground truth must be binary")
    return F.binary_cross_entropy_with_logits(edge_logits, edge_gt)


def weighted_bce(logits: torch.Tensor, gt: torch.Tensor, kernel: int = POOL_KERNEL) -> torch.Tensor:
    logits = _check_pair(logits, gt)
    w = boundary_weights(gt, kernel)
    bce = F.binary_cross_entropy_with_logits(logits, gt, reduction="none")
    return ((w * bce).sum(dim=(2, 3)) / w.sum(dim=(2, 3))).mean()


def weighted_iou(
    logits: torch.Tensor, gt: torch.Tensor, kernel: int = POOL_KERNEL, smooth: float = 1.0
) -> torch.Tensor:
    logits = _check_pair(logits, gt)
    w = boundary_weights(gt, kernel)
    prob = torch.sigmoid(logits)
    inter = (prob * gt * w).sum(dim=(2, 3))
    union = ((prob + gt) * w).sum(dim=(2, 3))
    return (1.0 - (inter + smooth) / (union - inter + smooth)).mean()


def resample_edge_gt(edge_gt: torch.Tensor, size) -> torch.Tensor:
    """Max-pool the edge map to ``size`` so one-pixel edges survive, then binarize at 0.5."""
    if tuple(edge_gt.shape[-2:]) != tuple(size):
        edge_gt = F.adaptive_max_pool2d(edge_gt, tuple(size))
    return (edge_gt >= 0.5).to(edge_gt.dtype)


@dataclass
class LossBreakdown:
    edge: torch.Tensor
    levels: dict[int, torch.Tensor] = field(default_factory=dict)
    total: torch.Tensor | None = None

    def as_floats(self) -> dict[str, float]:
        out = {"edge": self.edge.item()}
        out.update({f"mask_p{k}": v.item() for k, v in self.levels.items()})
        out["total"] = self.total.item()
        return out


def total_loss(
    preds: PredictionSet,
    mask_gt: torch.Tensor,
    edge_gt: torch.Tensor,
    level_weights: dict[int, float] | None = None,
    edge_weight: float = 1.0,
    kernel: int = POOL_KERNEL,
) -> LossBreakdown:
    """Edge BCE plus (weighted BCE + weighted IoU) on every supervised level.

    Predictions are upsampled to the ground-truth size; the edge map is
    max-pooled down to the edge head's resolution.
    """
    level_weights = level_weights or {}
    levels = {}
    total = mask_gt.new_zeros(())
    for level, logits in preds.levels().items():
        loss = weighted_bce(logits, mask_gt, kernel) + weighted_iou(logits, mask_gt, kernel)
        levels[level] = loss
        total = total + level_weights.get(level, 1.0) * loss
    if preds.edge_logits is not None:
        edge = edge_bce(preds.edge_logits, resample_edge_gt(edge_gt, preds.edge_logits.shape[-2:]))
        total = total + edge_weight * edge
    else:
        edge = mask_gt.new_zeros(())
    return LossBreakdown(edge=edge, levels=levels, total=total)
