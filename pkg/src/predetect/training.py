"""Training loop, loss assembly, seeding, and checkpoint round-tripping."""

from __future__ import annotations

import random
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, config_hash
from .heads import DenseOutput
from .losses import LossReport, TargetMaps, build_targets, focal_loss, reg_loss, total_loss
from .model import TemporalDetector, episode_tensors
from .scenes import Episode
from .validation import ConfigurationError

CHECKPOINT_VERSION = 1


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def stack_targets(episodes: list[Episode], config: ExperimentConfig) -> TargetMaps:
    """Current-frame targets for every episode, stacked channel-last:
    heatmaps [N, X, Y, n_classes], regression [N, X, Y, 8], mask [N, X, Y]."""
    grid = config.scene.grid()
    built = [
        build_targets(ep.current.objects, grid, config.scene.n_classes) for ep in episodes
    ]
    return TargetMaps(
        heatmaps=torch.stack([t.heatmaps for t in built]),
        regression=torch.stack([t.regression for t in built]),
        positive_mask=torch.stack([t.positive_mask for t in built]),
    )


def compute_loss(outputs: dict[str, torch.Tensor], targets: TargetMaps,
                 lambda_pred: float) -> LossReport:
    """Assemble the joint loss from a model forward pass.

    The auxiliary query-source head (baseline_plus_pfa) sees the current
    frame, so its supervision folds into the detection terms rather than the
    prediction terms.
    """
    det = DenseOutput(
        heatmaps=outputs["det_heatmaps"].permute(0, 2, 3, 1),
        regression=outputs["det_regression"].permute(0, 2, 3, 1),
    )
    pred = None
    if "pred_heatmaps" in outputs:
        pred = DenseOutput(
            heatmaps=outputs["pred_heatmaps"].permute(0, 2, 3, 1),
            regression=outputs["pred_regression"].permute(0, 2, 3, 1),
        )
    report = total_loss(det, pred, targets, lambda_pred)
    if "aux_heatmaps" in outputs:
        aux_cls = focal_loss(outputs["aux_heatmaps"].permute(0, 2, 3, 1), targets.heatmaps)
        aux_reg = reg_loss(
            outputs["aux_regression"].permute(0, 2, 3, 1),
            targets.regression,
            targets.positive_mask,
        )
        det_cls = report.det_cls + aux_cls
        det_reg = report.det_reg + aux_reg
        report = LossReport(
            total=(det_cls + det_reg) + lambda_pred * (report.pred_cls + report.pred_reg),
            det_cls=det_cls,
            det_reg=det_reg,
            pred_cls=report.pred_cls,
            pred_reg=report.pred_reg,
            lambda_pred=lambda_pred,
        )
    return report


def train(config: ExperimentConfig, episodes: list[Episode],
          log_every: int = 50, progress: bool = False,
          epoch_callback=None) -> tuple[TemporalDetector, list[dict]]:
    """Train a detector on pre-generated episodes.

    Deterministic for a fixed (config, episodes): seeds drive model init and
    batch shuffling.  Returns the trained model and the per-step loss log.
    """
    config.validate()
    if not episodes:
        raise ConfigurationError("training requires a non-empty episode list")
    min_frames = config.model.n_prev + 1
    if any(len(ep.frames) < min_frames for ep in episodes):
        raise ConfigurationError(
            f"mode {config.mode!r} with model.n_prev={config.model.n_prev} needs episodes "
            f"with at least {min_frames} frames"
        )
    tcfg = config.training
    seed_everything(tcfg.seed)
    model = TemporalDetector(config)
    model.train()

    observations, poses = episode_tensors(episodes)
    targets = stack_targets(episodes, config)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=tcfg.learning_rate, weight_decay=tcfg.weight_decay
    )
    shuffle_rng = np.random.default_rng(tcfg.seed)
    n = len(episodes)
    log: list[dict] = []
    step = 0
    for epoch in range(tcfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, tcfg.batch_size):
            idx = torch.from_numpy(order[start : start + tcfg.batch_size].copy())
            outputs = model(observations[idx], poses[idx])
            batch_targets = TargetMaps(
                heatmaps=targets.heatmaps[idx],
                regression=targets.regression[idx],
                positive_mask=targets.positive_mask[idx],
            )
            report = compute_loss(outputs, batch_targets, tcfg.lambda_pred)
            optimizer.zero_grad(set_to_none=True)
            report.total.backward()
            optimizer.step()
            if step % log_every == 0 or (epoch == tcfg.epochs - 1 and start + tcfg.batch_size >= n):
                entry = {"epoch": epoch, "step": step, **report.to_dict()}
                log.append(entry)
                if progress:
                    print(
                        f"epoch {epoch:3d} step {step:5d} "
                        f"total {entry['total']:.4f} det_cls {entry['det_cls']:.4f}"
                    )
            step += 1
        if epoch_callback is not None:
            model.eval()
            epoch_callback(model, epoch)
            model.train()
    model.eval()
    return model, log


def prediction_gradient_norm(model: TemporalDetector, observations: torch.Tensor,
                             poses: torch.Tensor, targets: TargetMaps) -> float:
    """Gradient probe: largest |d L_pred / d encoder_param|.

    With the stop-gradient toggle on this is exactly zero while prediction-
    head parameters still receive gradient.
    """
    if model.prediction_head is None:
        raise ValueError(f"mode {model.mode!r} has no prediction head")
    model.zero_grad(set_to_none=True)
    outputs = model(observations, poses)
    pred = DenseOutput(
        heatmaps=outputs["pred_heatmaps"].permute(0, 2, 3, 1),
        regression=outputs["pred_regression"].permute(0, 2, 3, 1),
    )
    loss = focal_loss(pred.heatmaps, targets.heatmaps) + reg_loss(
        pred.regression, targets.regression, targets.positive_mask
    )
    loss.backward()
    peak = 0.0
    for p in model.encoder.parameters():
        if p.grad is not None:
            peak = max(peak, float(p.grad.abs().max()))
    model.zero_grad(set_to_none=True)
    return peak


def save_checkpoint(path: str | Path, model: TemporalDetector,
                    config: ExperimentConfig) -> None:
    torch.save(
        {
            "checkpoint_version": CHECKPOINT_VERSION,
            "config": config.to_dict(),
            "config_hash": config_hash(config),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[TemporalDetector, ExperimentConfig]:
    payload = torch.load(path, weights_only=False)
    version = payload.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = ExperimentConfig.from_dict(payload["config"])
    if config_hash(config) != payload["config_hash"]:
        raise ValueError("checkpoint config hash mismatch")
    model = TemporalDetector(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, config
