"""Center-distance detection metrics.

Detections are matched to ground truth greedily in descending score order:
each detection claims the nearest unmatched same-class object in its sample
if the center distance is within the threshold.  AP integrates the raw
precision-recall steps; translation / velocity / orientation errors average
over true positives at a single reference threshold.  A `moving` variant
restricts ground truth to objects above a speed cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .heads import DetectionBox
from .scenes import SceneObject, wrap_angle


@dataclass
class ClassMetrics:
    ap: dict[float, float]
    ate: float
    ave: float
    aoe: float
    n_gt: int
    n_tp: int


@dataclass
class MetricsReport:
    """Aggregate metrics: mAP over classes x thresholds, TP errors at the
    reference threshold.  Error fields are inf when no true positives."""

    map: float
    mate: float
    mave: float
    maoe: float
    subset: str
    distance_thresholds: tuple[float, ...]
    tp_error_threshold: float
    per_class: dict[int, ClassMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mAP": self.map,
            "mATE": self.mate,
            "mAVE": self.mave,
            "mAOE": self.maoe,
            "subset": self.subset,
            "distance_thresholds": list(self.distance_thresholds),
            "tp_error_threshold": self.tp_error_threshold,
            "per_class": {
                str(cid): {
                    "AP": {str(d): v for d, v in cm.ap.items()},
                    "ATE": cm.ate,
                    "AVE": cm.ave,
                    "AOE": cm.aoe,
                    "n_gt": cm.n_gt,
                    "n_tp": cm.n_tp,
                }
                for cid, cm in self.per_class.items()
            },
        }


def _match_class(
    dets: list[tuple[float, int, DetectionBox]],
    gts_by_sample: dict[int, list[SceneObject]],
    threshold: float,
) -> tuple[list[bool], list[tuple[DetectionBox, SceneObject, float]]]:
    """Greedy matching for one class at one distance threshold.

    `dets` must already be sorted by descending score.  Returns the per-
    detection TP flags and the matched (det, gt, distance) pairs.
    """
    matched: dict[int, set[int]] = {s: set() for s in gts_by_sample}
    tp_flags: list[bool] = []
    pairs: list[tuple[DetectionBox, SceneObject, float]] = []
    for _, sample, det in dets:
        gts = gts_by_sample.get(sample, [])
        best_j, best_dist = -1, math.inf
        for j, gt in enumerate(gts):
            if j in matched.get(sample, set()):
                continue
            dist = math.hypot(det.center[0] - gt.center[0], det.center[1] - gt.center[1])
            if dist < best_dist:
                best_j, best_dist = j, dist
        if best_j >= 0 and best_dist <= threshold:
            matched[sample].add(best_j)
            tp_flags.append(True)
            pairs.append((det, gts[best_j], best_dist))
        else:
            tp_flags.append(False)
    return tp_flags, pairs


def average_precision(tp_flags: list[bool], n_gt: int) -> float:
    """Step integration of the precision-recall curve: sum of precision at
    each true positive times the recall increment."""
    if n_gt == 0:
        return float("nan")
    ap = 0.0
    tp = 0
    for i, flag in enumerate(tp_flags, start=1):
        if flag:
            tp += 1
            ap += (1.0 / n_gt) * (tp / i)
    return ap


def evaluate_detections(
    detections: list[list[DetectionBox]],
    ground_truth: list[list[SceneObject]],
    distance_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0),
    tp_error_threshold: float = 2.0,
    subset: str = "all",
    moving_speed_cutoff: float = 1.0,
    n_classes: int | None = None,
) -> MetricsReport:
    """Compute mAP / mATE / mAVE / mAOE over a dataset.

    detections[i] and ground_truth[i] belong to sample i.  With
    subset="moving", ground truth is restricted to objects faster than
    `moving_speed_cutoff` before matching (detections are left as-is).
    Classes with no ground truth are excluded from the means.
    """
    if len(detections) != len(ground_truth):
        raise ValueError("detections and ground_truth must have the same length")
    if subset not in ("all", "moving"):
        raise ValueError(f"unknown subset {subset!r}")
    if subset == "moving":
        ground_truth = [
            [g for g in gts if g.speed > moving_speed_cutoff] for gts in ground_truth
        ]
    class_ids = set()
    for gts in ground_truth:
        class_ids.update(g.class_id for g in gts)
    if n_classes is not None:
        class_ids.update(range(n_classes))
    class_ids = sorted(class_ids)

    per_class: dict[int, ClassMetrics] = {}
    ap_values: list[float] = []
    ate_values, ave_values, aoe_values = [], [], []
    for cid in class_ids:
        dets = []
        for sample, boxes in enumerate(detections):
            for order, box in enumerate(boxes):
                if box.class_id == cid:
                    dets.append((box.score, sample, order, box))
        # Descending score; ties broken by sample then decode order.
        dets.sort(key=lambda r: (-r[0], r[1], r[2]))
        dets = [(s, smp, b) for s, smp, _, b in dets]
        gts_by_sample = {
            sample: [g for g in gts if g.class_id == cid]
            for sample, gts in enumerate(ground_truth)
        }
        n_gt = sum(len(v) for v in gts_by_sample.values())
        ap = {}
        for d in distance_thresholds:
            flags, _ = _match_class(dets, gts_by_sample, d)
            ap[d] = average_precision(flags, n_gt)
        _, tp_pairs = _match_class(dets, gts_by_sample, tp_error_threshold)
        if tp_pairs:
            ate = float(np.mean([dist for _, _, dist in tp_pairs]))
            ave = float(
                np.mean(
                    [
                        math.hypot(
                            det.velocity[0] - gt.velocity[0], det.velocity[1] - gt.velocity[1]
                        )
                        for det, gt, _ in tp_pairs
                    ]
                )
            )
            aoe = float(np.mean([abs(wrap_angle(det.yaw - gt.yaw)) for det, gt, _ in tp_pairs]))
        else:
            ate = ave = aoe = float("inf")
        per_class[cid] = ClassMetrics(ap=ap, ate=ate, ave=ave, aoe=aoe, n_gt=n_gt,
                                      n_tp=len(tp_pairs))
        if n_gt > 0:
            ap_values.extend(ap.values())
            ate_values.append(ate)
            ave_values.append(ave)
            aoe_values.append(aoe)

    return MetricsReport(
        map=float(np.mean(ap_values)) if ap_values else 0.0,
        mate=float(np.mean(ate_values)) if ate_values else float("inf"),
        mave=float(np.mean(ave_values)) if ave_values else float("inf"),
        maoe=float(np.mean(aoe_values)) if aoe_values else float("inf"),
        subset=subset,
        distance_thresholds=tuple(distance_thresholds),
        tp_error_threshold=tp_error_threshold,
        per_class=per_class,
    )
