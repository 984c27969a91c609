"""Experiment sweeps: module ablation, previous-frame count, backbone
supervision, and loss-weight sweeps, each repeated over seeds with
mean +/- std aggregation.

Datasets are derived deterministically from the scene config: training
episodes use seed blocks disjoint per run seed, while evaluation episodes
are a single fixed set shared by every variant so comparisons are paired.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
import time
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig
from .evaluation import run_evaluation
from .metrics import MetricsReport
from .scenes import SceneConfig, generate_dataset
from .training import train

TRAIN_SEED_BLOCK = 1_000_000
EVAL_SEED_BASE = 7_000_000
CLEAN_EVAL_SEED_BASE = 8_000_000

DEFAULT_SEEDS = (0, 1, 2)


def train_dataset(scene: SceneConfig, n_episodes: int, run_seed: int):
    return generate_dataset(scene, n_episodes, (run_seed + 1) * TRAIN_SEED_BLOCK)


def eval_dataset(scene: SceneConfig, n_episodes: int):
    return generate_dataset(scene, n_episodes, EVAL_SEED_BASE)


def clean_eval_dataset(scene: SceneConfig, n_episodes: int):
    """Noiseless, dropout-free episodes for prediction-quality evaluation."""
    clean = replace(scene, noise_sigma=0.0, dropout_prob=0.0)
    return generate_dataset(clean, n_episodes, CLEAN_EVAL_SEED_BASE)


class _DatasetCache:
    """Memoizes generated datasets within one suite run."""

    def __init__(self):
        self._store: dict = {}

    def get(self, kind: str, scene: SceneConfig, n_episodes: int, run_seed: int = 0):
        key = (kind, dataclasses.astuple(scene), n_episodes, run_seed)
        if key not in self._store:
            if kind == "train":
                self._store[key] = train_dataset(scene, n_episodes, run_seed)
            elif kind == "eval":
                self._store[key] = eval_dataset(scene, n_episodes)
            else:
                self._store[key] = clean_eval_dataset(scene, n_episodes)
        return self._store[key]


def run_single(config: ExperimentConfig, cache: _DatasetCache | None = None,
               progress: bool = False) -> dict:
    """Train one configuration and evaluate it; returns a flat result row."""
    cache = cache or _DatasetCache()
    train_eps = cache.get("train", config.scene, config.training.n_train_episodes,
                          config.training.seed)
    eval_eps = cache.get("eval", config.scene, config.eval.n_eval_episodes)
    t0 = time.time()
    model, _ = train(config, train_eps, progress=progress)
    reports = run_evaluation(model, eval_eps, config)
    row = {
        "mode": config.mode,
        "seed": config.training.seed,
        "n_prev": config.model.n_prev,
        "lambda_pred": config.training.lambda_pred,
        "stop_gradient_prediction": config.training.stop_gradient_prediction,
        "train_seconds": round(time.time() - t0, 1),
    }
    for name, report in reports.items():
        row[f"{name}.mAP"] = report.map
        row[f"{name}.mATE"] = report.mate
        row[f"{name}.mAVE"] = report.mave
        row[f"{name}.mAOE"] = report.maoe
    return row


def _aggregate(rows: list[dict], group_keys: tuple[str, ...]) -> list[dict]:
    """Mean +/- std of every metric column over seeds, per variant group."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in groups.items():
        agg: dict = dict(zip(group_keys, key))
        agg["n_seeds"] = len(members)
        metric_keys = [k for k in members[0] if "." in k]
        for mk in metric_keys:
            vals = [m[mk] for m in members if m[mk] == m[mk]]  # drop NaN
            finite = [v for v in vals if v != float("inf")]
            if not finite:
                agg[f"{mk}.mean"] = float("inf")
                agg[f"{mk}.std"] = 0.0
                continue
            agg[f"{mk}.mean"] = statistics.fmean(finite)
            agg[f"{mk}.std"] = statistics.pstdev(finite) if len(finite) > 1 else 0.0
        out.append(agg)
    return out


def _sweep(base: ExperimentConfig, variants: list[dict], seeds, cache, progress) -> list[dict]:
    rows = []
    for variant in variants:
        for seed in seeds:
            cfg = base
            if "mode" in variant:
                cfg = cfg.replace(mode=variant["mode"])
            if "model" in variant:
                cfg = cfg.replace(model=replace(cfg.model, **variant["model"]))
            training_updates = dict(variant.get("training", {}))
            training_updates["seed"] = seed
            cfg = cfg.replace(training=replace(cfg.training, **training_updates))
            row = run_single(cfg, cache, progress)
            rows.append(row)
            if progress:
                print(json.dumps(row))
    return rows


def module_ablation(base: ExperimentConfig, seeds=DEFAULT_SEEDS,
                    cache=None, progress=False) -> dict:
    """Four-way module grid: neither / prediction head only / feature
    aggregation only / both."""
    variants = [
        {"mode": "baseline_concat"},
        {"mode": "p2d_no_pfa"},
        {"mode": "baseline_plus_pfa"},
        {"mode": "p2d"},
    ]
    rows = _sweep(base, variants, seeds, cache or _DatasetCache(), progress)
    return {"table": "modules", "rows": rows, "summary": _aggregate(rows, ("mode",))}


def frame_count_ablation(base: ExperimentConfig, seeds=DEFAULT_SEEDS,
                         cache=None, progress=False) -> dict:
    """Baseline with 0-3 previous frames vs the full model with 2-3."""
    scene = replace(base.scene, n_prev=max(3, base.scene.n_prev))
    base = base.replace(scene=scene)
    variants = [
        *({"mode": "baseline_concat", "model": {"n_prev": n}} for n in (0, 1, 2, 3)),
        *({"mode": "p2d", "model": {"n_prev": n}} for n in (2, 3)),
    ]
    rows = _sweep(base, variants, seeds, cache or _DatasetCache(), progress)
    return {
        "table": "frames",
        "rows": rows,
        "summary": _aggregate(rows, ("mode", "n_prev")),
    }


def supervision_ablation(base: ExperimentConfig, seeds=DEFAULT_SEEDS,
                         cache=None, progress=False) -> dict:
    """Full model with and without encoder gradients from the prediction
    loss."""
    base = base.replace(mode="p2d")
    variants = [
        {"training": {"stop_gradient_prediction": False}},
        {"training": {"stop_gradient_prediction": True}},
    ]
    rows = _sweep(base, variants, seeds, cache or _DatasetCache(), progress)
    return {
        "table": "supervision",
        "rows": rows,
        "summary": _aggregate(rows, ("stop_gradient_prediction",)),
    }


def loss_weight_ablation(base: ExperimentConfig, seeds=DEFAULT_SEEDS,
                         lambdas=(0.1, 0.3, 0.5), cache=None, progress=False) -> dict:
    base = base.replace(mode="p2d")
    variants = [{"training": {"lambda_pred": lam}} for lam in lambdas]
    rows = _sweep(base, variants, seeds, cache or _DatasetCache(), progress)
    return {
        "table": "loss_weight",
        "rows": rows,
        "summary": _aggregate(rows, ("lambda_pred",)),
    }


ABLATION_TABLES = {
    "modules": module_ablation,
    "frames": frame_count_ablation,
    "supervision": supervision_ablation,
    "loss_weight": loss_weight_ablation,
}


def run_ablation_suite(base: ExperimentConfig, tables=("modules", "frames", "supervision",
                                                       "loss_weight"),
                       seeds=DEFAULT_SEEDS, out_dir: str | Path | None = None,
                       progress: bool = False) -> dict:
    """Run the requested sweeps with a shared dataset cache.

    Writes per-run rows as JSON lines and an aggregated summary when
    `out_dir` is given.
    """
    unknown = set(tables) - set(ABLATION_TABLES)
    if unknown:
        raise ValueError(f"unknown ablation tables: {sorted(unknown)}")
    cache = _DatasetCache()
    results = {}
    for name in tables:
        results[name] = ABLATION_TABLES[name](base, seeds=seeds, cache=cache, progress=progress)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "ablation_rows.jsonl", "w") as fh:
            for name, res in results.items():
                for row in res["rows"]:
                    fh.write(json.dumps({"table": name, **row}) + "\n")
        summary = {name: res["summary"] for name, res in results.items()}
        (out_dir / "ablation_summary.json").write_text(json.dumps(summary, indent=2))
    return results
