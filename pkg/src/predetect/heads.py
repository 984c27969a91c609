"""Dense prediction and detection heads plus box decoding.

Both heads share one architecture: a two-layer conv trunk over their input
feature stack followed by per-attribute 1x1 branches (per-class heatmaps and
an 8-channel box regression).  The prediction head runs on concatenated
previous-frame features only; the detection head runs on the aggregated
spatio-temporal feature concatenated with the current frame's feature.  The
two never share weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .alignment import ALIGNED, BEVFeature
from .scenes import GridSpec

# Regression channel layout, fixed across heads, targets, and decode.
REG_CHANNELS = 8  # offset_x, offset_y, log_length, log_width, sin_yaw, cos_yaw, v_x, v_y

# Initial heatmap-branch bias; sigmoid(-2.19) ~ 0.1 keeps early focal loss stable.
HEATMAP_BIAS_INIT = -2.19


@dataclass
class DenseOutput:
    """Per-sample head output with spec-oriented channel-last layout:
    heatmaps [X, Y, n_classes] in (0, 1), regression [X, Y, 8]."""

    heatmaps: torch.Tensor
    regression: torch.Tensor


# The prediction and detection outputs share one structure; aliases keep
# call sites self-describing.
PredictionOutput = DenseOutput
DetectionOutput = DenseOutput


@dataclass(frozen=True)
class DetectionBox:
    """A decoded box in the current ego frame."""

    class_id: int
    score: float
    center: tuple[float, float]
    size: tuple[float, float]
    yaw: float
    velocity: tuple[float, float]


class DenseDetectionHead(nn.Module):
    """Conv trunk + separate 1x1 attribute branches (heatmap / offset /
    size / yaw / velocity)."""

    def __init__(self, in_channels: int, n_classes: int, hidden: int = 64):
        super().__init__()
        self.in_channels = in_channels
        self.n_classes = n_classes
        self.trunk = nn.Sequential(
            nn.Conv2d(in_channels, hidden, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.heatmap_branch = nn.Conv2d(hidden, n_classes, kernel_size=1)
        self.offset_branch = nn.Conv2d(hidden, 2, kernel_size=1)
        self.size_branch = nn.Conv2d(hidden, 2, kernel_size=1)
        self.yaw_branch = nn.Conv2d(hidden, 2, kernel_size=1)
        self.velocity_branch = nn.Conv2d(hidden, 2, kernel_size=1)
        nn.init.constant_(self.heatmap_branch.bias, HEATMAP_BIAS_INIT)

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """features [B, in_channels, X, Y] -> (heatmaps [B, n_classes, X, Y]
        post-sigmoid, regression [B, 8, X, Y])."""
        if features.shape[1] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, got {features.shape[1]}"
            )
        h = self.trunk(features)
        heatmaps = torch.sigmoid(self.heatmap_branch(h))
        regression = torch.cat(
            [
                self.offset_branch(h),
                self.size_branch(h),
                self.yaw_branch(h),
                self.velocity_branch(h),
            ],
            dim=1,
        )
        return heatmaps, regression


def predict(features_prev: list[BEVFeature], head: DenseDetectionHead) -> PredictionOutput:
    """Forecast current-frame objects from previous-frame features only.

    Requires at least two aligned previous features; the current frame's
    feature must not be passed in.
    """
    if len(features_prev) < 2:
        raise ValueError(f"need at least 2 previous features, got {len(features_prev)}")
    for f in features_prev:
        if f.frame_tag != ALIGNED:
            raise ValueError(f"feature at timestep {f.timestep_index} is not aligned-to-current")
    stacked = torch.cat([f.data for f in features_prev], dim=2)  # [X, Y, (T-1)*C]
    batched = stacked.permute(2, 0, 1).unsqueeze(0)
    heatmaps, regression = head(batched)
    return PredictionOutput(
        heatmaps=heatmaps[0].permute(1, 2, 0),
        regression=regression[0].permute(1, 2, 0),
    )


def detect(aggregated: torch.Tensor, feature_curr: BEVFeature,
           head: DenseDetectionHead) -> DetectionOutput:
    """Run the detection head on aggregated ⊕ current features.

    aggregated: [X, Y, C_f] spatio-temporal feature; feature_curr: the
    current frame's (unwarped) feature with matching shape.
    """
    if aggregated.shape != feature_curr.data.shape:
        raise ValueError(
            f"aggregated shape {tuple(aggregated.shape)} does not match current "
            f"feature {tuple(feature_curr.data.shape)}"
        )
    stacked = torch.cat([aggregated, feature_curr.data], dim=2)
    batched = stacked.permute(2, 0, 1).unsqueeze(0)
    heatmaps, regression = head(batched)
    return DetectionOutput(
        heatmaps=heatmaps[0].permute(1, 2, 0),
        regression=regression[0].permute(1, 2, 0),
    )


def decode(output: DenseOutput, grid: GridSpec, score_threshold: float = 0.1,
           max_detections: int = 100) -> list[DetectionBox]:
    """Decode head output into boxes via 3x3 local-maximum suppression.

    A cell is a peak if its heatmap value equals the max of its 3x3
    neighborhood and exceeds the threshold.  Ties across equal peaks are
    broken by (class, row-major cell index); at most `max_detections` boxes
    are returned, highest scores first.
    """
    if not 0.0 <= score_threshold <= 1.0:
        raise ValueError(f"score_threshold must be in [0, 1], got {score_threshold}")
    if max_detections < 1:
        raise ValueError(f"max_detections must be >= 1, got {max_detections}")
    heatmaps = output.heatmaps.detach()
    regression = output.regression.detach()
    hm = heatmaps.permute(2, 0, 1).unsqueeze(0)  # [1, n_classes, X, Y]
    pooled = torch.nn.functional.max_pool2d(hm, kernel_size=3, stride=1, padding=1)
    peaks = (hm == pooled) & (hm > score_threshold)
    cls_idx, xs, ys = torch.nonzero(peaks[0], as_tuple=True)
    if cls_idx.numel() == 0:
        return []
    scores = hm[0, cls_idx, xs, ys]
    # Highest score first; ties by class then row-major cell index.
    order = sorted(
        range(cls_idx.numel()),
        key=lambda i: (-float(scores[i]), int(cls_idx[i]), int(xs[i]) * grid.cells_y + int(ys[i])),
    )
    boxes = []
    for i in order[:max_detections]:
        ci, xi, yi = int(cls_idx[i]), int(xs[i]), int(ys[i])
        reg = regression[xi, yi]
        center = grid.cell_to_world((xi + float(reg[0]), yi + float(reg[1])))
        yaw = math.atan2(float(reg[4]), float(reg[5]))
        boxes.append(
            DetectionBox(
                class_id=ci,
                score=float(scores[i]),
                center=(float(center[0]), float(center[1])),
                size=(math.exp(float(reg[2])), math.exp(float(reg[3]))),
                yaw=yaw,
                velocity=(float(reg[6]), float(reg[7])),
            )
        )
    return boxes


def decode_batched(heatmaps: torch.Tensor, regression: torch.Tensor, grid: GridSpec,
                   score_threshold: float = 0.1, max_detections: int = 100
                   ) -> list[list[DetectionBox]]:
    """Decode a batch of NCHW head outputs; returns one box list per sample."""
    results = []
    for b in range(heatmaps.shape[0]):
        out = DenseOutput(
            heatmaps=heatmaps[b].permute(1, 2, 0),
            regression=regression[b].permute(1, 2, 0),
        )
        results.append(decode(out, grid, score_threshold, max_detections))
    return results
