"""Figure emission: per-episode heatmap/query/detection panels and metric
plots."""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from .config import ExperimentConfig
from .evaluation import ground_truth_boxes
from .heads import DenseOutput, decode
from .model import TemporalDetector, episode_tensors
from .scenes import Episode


def _draw_boxes(ax, boxes, color: str, grid):
    for box in boxes:
        cx, cy = grid.world_to_cell(box.center)
        length = box.size[0] / grid.cell_size
        width = box.size[1] / grid.cell_size
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        corners = np.array(
            [[dx * length / 2, dy * width / 2] for dx, dy in
             ((-1, -1), (1, -1), (1, 1), (-1, 1), (-1, -1))]
        )
        rotated = corners @ np.array([[c, s], [-s, c]])
        # Grid x runs down the image rows, so plot (y, x).
        ax.plot(cy + rotated[:, 1], cx + rotated[:, 0], color=color, linewidth=1.2)


def render_episode_panels(model: TemporalDetector, episode: Episode,
                          config: ExperimentConfig, path: str | Path) -> None:
    """Write a four-panel figure: current observation with ground truth,
    predicted class-agnostic heatmap, query mask, and detection heatmap with
    decoded boxes."""
    grid = model.grid
    observations, poses = episode_tensors([episode])
    with torch.inference_mode():
        outputs = model(observations, poses, return_intermediates=True)
    det_hm = outputs["det_heatmaps"][0].max(dim=0).values.numpy()
    obs = episode.current.observation[:, :, : config.scene.n_classes].sum(axis=2)

    fig, axes = plt.subplots(1, 4, figsize=(16, 4.2))
    axes[0].imshow(obs, cmap="gray_r", origin="upper")
    _draw_boxes(axes[0], ground_truth_boxes([episode])[0], "tab:green", grid)
    axes[0].set_title("observation + ground truth")

    if "pred_heatmaps" in outputs:
        pred_ca = outputs["pred_heatmaps"][0].max(dim=0).values.numpy()
        axes[1].imshow(pred_ca, cmap="magma", origin="upper", vmin=0, vmax=1)
        axes[1].set_title("predicted class-agnostic heatmap")
    else:
        axes[1].set_title("(no prediction head)")
        axes[1].axis("off")

    if "query_positions" in outputs:
        mask = np.zeros((grid.cells_x, grid.cells_y))
        pos = outputs["query_positions"][0].numpy()
        mask[pos[:, 0], pos[:, 1]] = 1.0
        axes[2].imshow(mask, cmap="cividis", origin="upper")
        axes[2].set_title(f"query mask (k={pos.shape[0]})")
    else:
        axes[2].set_title("(no query selection)")
        axes[2].axis("off")

    axes[3].imshow(det_hm, cmap="magma", origin="upper", vmin=0, vmax=1)
    det_out = DenseOutput(
        heatmaps=outputs["det_heatmaps"][0].permute(1, 2, 0),
        regression=outputs["det_regression"][0].permute(1, 2, 0),
    )
    boxes = decode(det_out, grid, config.eval.score_threshold, config.eval.max_detections)
    _draw_boxes(axes[3], boxes, "tab:cyan", grid)
    axes[3].set_title("detection heatmap + boxes")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_curves(log: list[dict], path: str | Path) -> None:
    steps = [row["step"] for row in log]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("total", "det_cls", "det_reg", "pred_cls", "pred_reg"):
        ax.plot(steps, [row[key] for row in log], label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_table(summary_path: str | Path, out_path: str | Path,
                      metric: str = "detection.mAP") -> None:
    """Bar chart of one aggregated metric per ablation variant."""
    summary = json.loads(Path(summary_path).read_text())
    fig, axes = plt.subplots(1, len(summary), figsize=(5 * len(summary), 4), squeeze=False)
    for ax, (table, rows) in zip(axes[0], summary.items()):
        labels, means, stds = [], [], []
        for row in rows:
            label = ", ".join(
                f"{k}={row[k]}" for k in row
                if k not in ("n_seeds",) and "." not in k
            )
            labels.append(label)
            means.append(row.get(f"{metric}.mean", float("nan")))
            stds.append(row.get(f"{metric}.std", 0.0))
        ax.bar(range(len(labels)), means, yerr=stds, capsize=3)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(f"{table}: {metric}")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
