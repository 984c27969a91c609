"""Dataset-level evaluation: run a trained model over episodes and score it.

Produces the standard report pair (all objects / moving objects) for the
detection output and, when the mode has a prediction head, the same pair for
prediction-only boxes decoded without ever feeding the current frame's
observation to the model.
"""

from __future__ import annotations

import torch

from .config import EvalConfig, ExperimentConfig
from .heads import DetectionBox, decode_batched
from .metrics import MetricsReport, evaluate_detections
from .model import TemporalDetector, episode_tensors
from .scenes import Episode, SceneObject


def collect_detections(model: TemporalDetector, episodes: list[Episode],
                       eval_config: EvalConfig, prediction_only: bool = False,
                       batch_size: int = 64) -> list[list[DetectionBox]]:
    """Decode boxes for every episode; `prediction_only` uses the
    previous-frames-only path."""
    grid = model.grid
    results: list[list[DetectionBox]] = []
    model.eval()
    with torch.inference_mode():
        for start in range(0, len(episodes), batch_size):
            chunk = episodes[start : start + batch_size]
            observations, poses = episode_tensors(chunk)
            if prediction_only:
                outputs = model.forward_prediction(observations[:, :-1], poses)
                heatmaps, regression = outputs["pred_heatmaps"], outputs["pred_regression"]
            else:
                outputs = model(observations, poses)
                heatmaps, regression = outputs["det_heatmaps"], outputs["det_regression"]
            results.extend(
                decode_batched(
                    heatmaps,
                    regression,
                    grid,
                    score_threshold=eval_config.score_threshold,
                    max_detections=eval_config.max_detections,
                )
            )
    return results


def ground_truth_boxes(episodes: list[Episode]) -> list[list[SceneObject]]:
    return [list(ep.current.objects) for ep in episodes]


def run_evaluation(model: TemporalDetector, episodes: list[Episode],
                   config: ExperimentConfig) -> dict[str, MetricsReport]:
    """Evaluate a model on episodes.

    Returns reports keyed 'detection' / 'detection_moving' and, for modes
    with a prediction head, 'prediction' / 'prediction_moving'.
    """
    if not episodes:
        raise ValueError("evaluation requires a non-empty episode list")
    ecfg = config.eval
    gts = ground_truth_boxes(episodes)

    def score(dets, subset):
        return evaluate_detections(
            dets,
            gts,
            distance_thresholds=ecfg.distance_thresholds,
            tp_error_threshold=ecfg.tp_error_threshold,
            subset=subset,
            moving_speed_cutoff=ecfg.moving_speed_cutoff,
            n_classes=config.scene.n_classes,
        )

    detections = collect_detections(model, episodes, ecfg)
    reports = {
        "detection": score(detections, "all"),
        "detection_moving": score(detections, "moving"),
    }
    if model.prediction_head is not None:
        predicted = collect_detections(model, episodes, ecfg, prediction_only=True)
        reports["prediction"] = score(predicted, "all")
        reports["prediction_moving"] = score(predicted, "moving")
    return reports
