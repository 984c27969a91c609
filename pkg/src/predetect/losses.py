"""Training targets and the joint detection + prediction loss.

Both heads are supervised with the same current-frame targets: per-class
heatmaps carrying a gaussian splat around each object's center cell (exactly
1.0 at the center) and regression targets written at center cells only.
Classification uses the penalty-reduced focal loss over dense heatmaps;
regression uses plain L1 at positive cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .heads import REG_CHANNELS, DenseOutput
from .scenes import GridSpec, SceneObject

FOCAL_ALPHA = 2.0  # exponent on the easy-example down-weighting term
FOCAL_BETA = 4.0  # exponent on the gaussian penalty reduction at negatives
_EPS = 1e-6


@dataclass
class TargetMaps:
    """Dense supervision for one frame, channel-last."""

    heatmaps: torch.Tensor  # [X, Y, n_classes] in [0, 1]
    regression: torch.Tensor  # [X, Y, 8]
    positive_mask: torch.Tensor  # [X, Y] bool, object-center cells


@dataclass
class LossReport:
    """Joint loss decomposition; `total` is exactly detection plus
    lambda-weighted prediction."""

    total: torch.Tensor
    det_cls: torch.Tensor
    det_reg: torch.Tensor
    pred_cls: torch.Tensor
    pred_reg: torch.Tensor
    lambda_pred: float

    def to_dict(self) -> dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "det_cls": float(self.det_cls.detach()),
            "det_reg": float(self.det_reg.detach()),
            "pred_cls": float(self.pred_cls.detach()),
            "pred_reg": float(self.pred_reg.detach()),
            "lambda_pred": self.lambda_pred,
        }


def gaussian_radius_cells(size: tuple[float, float], cell_size: float) -> int:
    """Splat radius in cells from object size: half the smaller extent,
    with a floor of one cell."""
    return max(1, math.ceil(min(size) / (2.0 * cell_size)))


def build_targets(objects: list[SceneObject] | tuple[SceneObject, ...], grid: GridSpec,
                  n_classes: int) -> TargetMaps:
    """Build heatmap/regression targets for ground-truth objects.

    Each in-grid object contributes a gaussian splat (peak exactly 1.0 at
    its center cell, elementwise max on overlap) on its class channel and an
    8-channel regression target at the center cell.  Out-of-grid centers
    are skipped.
    """
    heatmaps = np.zeros((grid.cells_x, grid.cells_y, n_classes), dtype=np.float32)
    regression = np.zeros((grid.cells_x, grid.cells_y, REG_CHANNELS), dtype=np.float32)
    positive = np.zeros((grid.cells_x, grid.cells_y), dtype=bool)
    for obj in objects:
        cx, cy = grid.world_to_cell(obj.center)
        ci, cj = int(math.floor(cx)), int(math.floor(cy))
        if not (0 <= ci < grid.cells_x and 0 <= cj < grid.cells_y):
            continue
        radius = gaussian_radius_cells(obj.size, grid.cell_size)
        sigma = (2.0 * radius + 1.0) / 6.0
        i_lo, i_hi = max(0, ci - radius), min(grid.cells_x, ci + radius + 1)
        j_lo, j_hi = max(0, cj - radius), min(grid.cells_y, cj + radius + 1)
        di = np.arange(i_lo, i_hi) - ci
        dj = np.arange(j_lo, j_hi) - cj
        splat = np.exp(-(di[:, None] ** 2 + dj[None, :] ** 2) / (2.0 * sigma**2))
        patch = heatmaps[i_lo:i_hi, j_lo:j_hi, obj.class_id]
        np.maximum(patch, splat.astype(np.float32), out=patch)
        heatmaps[ci, cj, obj.class_id] = 1.0
        positive[ci, cj] = True
        regression[ci, cj] = [
            cx - ci,
            cy - cj,
            math.log(obj.size[0]),
            math.log(obj.size[1]),
            math.sin(obj.yaw),
            math.cos(obj.yaw),
            obj.velocity[0],
            obj.velocity[1],
        ]
    return TargetMaps(
        heatmaps=torch.from_numpy(heatmaps),
        regression=torch.from_numpy(regression),
        positive_mask=torch.from_numpy(positive),
    )


def focal_loss(pred_heatmaps: torch.Tensor, target_heatmaps: torch.Tensor) -> torch.Tensor:
    """Penalty-reduced focal loss over dense heatmaps.

    Cells with target exactly 1 are positives; all others are negatives
    down-weighted by (1 - target)^beta.  Normalized by the positive count
    (at least 1).  Shapes are arbitrary as long as they match.
    """
    if pred_heatmaps.shape != target_heatmaps.shape:
        raise ValueError(
            f"shape mismatch: {tuple(pred_heatmaps.shape)} vs {tuple(target_heatmaps.shape)}"
        )
    pred = pred_heatmaps.clamp(_EPS, 1.0 - _EPS)
    positive = target_heatmaps == 1.0
    pos_loss = -((1.0 - pred) ** FOCAL_ALPHA) * torch.log(pred)
    neg_loss = (
        -((1.0 - target_heatmaps) ** FOCAL_BETA) * (pred**FOCAL_ALPHA) * torch.log(1.0 - pred)
    )
    loss = torch.where(positive, pos_loss, neg_loss).sum()
    n_pos = positive.sum().clamp(min=1)
    return loss / n_pos.to(loss.dtype)


def reg_loss(pred_regression: torch.Tensor, target_regression: torch.Tensor,
             positive_mask: torch.Tensor) -> torch.Tensor:
    """L1 regression loss at positive cells.

    pred/target: [..., 8] channel-last; positive_mask: [...] bool.  Returns
    the per-cell mean absolute error over channels, averaged over positives
    (zero when there are none).
    """
    if pred_regression.shape != target_regression.shape:
        raise ValueError(
            f"shape mismatch: {tuple(pred_regression.shape)} vs {tuple(target_regression.shape)}"
        )
    per_cell = (pred_regression - target_regression).abs().mean(dim=-1)
    masked = per_cell * positive_mask.to(per_cell.dtype)
    n_pos = positive_mask.sum().clamp(min=1)
    return masked.sum() / n_pos.to(per_cell.dtype)


def total_loss(det_out: DenseOutput, pred_out: DenseOutput | None, targets: TargetMaps,
               lambda_pred: float) -> LossReport:
    """Joint loss: detection plus lambda-weighted prediction, both heads
    supervised by the same current-frame targets."""
    if lambda_pred < 0:
        raise ValueError(f"lambda_pred must be >= 0, got {lambda_pred}")
    det_cls = focal_loss(det_out.heatmaps, targets.heatmaps)
    det_reg = reg_loss(det_out.regression, targets.regression, targets.positive_mask)
    if pred_out is not None:
        pred_cls = focal_loss(pred_out.heatmaps, targets.heatmaps)
        pred_reg = reg_loss(pred_out.regression, targets.regression, targets.positive_mask)
    else:
        pred_cls = det_cls.new_zeros(())
        pred_reg = det_reg.new_zeros(())
    total = (det_cls + det_reg) + lambda_pred * (pred_cls + pred_reg)
    return LossReport(
        total=total,
        det_cls=det_cls,
        det_reg=det_reg,
        pred_cls=pred_cls,
        pred_reg=pred_reg,
        lambda_pred=lambda_pred,
    )
