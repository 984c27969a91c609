"""Experiment configuration: dataclasses, JSON round-tripping, overrides.

One JSON file describes a full experiment (scene, model, training, eval,
mode).  CLI flags override individual keys with dotted paths, e.g.
``training.epochs=10``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .scenes import SceneConfig
from .validation import ConfigurationError, check_positive, check_probability

# Active model variants.  `p2d` is the full prediction-guided pipeline;
# `baseline_concat` warps and channel-concatenates all frames into the
# detection head; `p2d_no_pfa` keeps the prediction head but concatenates
# its raw output with the features instead of attending; `baseline_plus_pfa`
# keeps the attention aggregation but sources queries from an auxiliary
# detection-style head over concatenated features.
MODES = ("p2d", "baseline_concat", "p2d_no_pfa", "baseline_plus_pfa")


@dataclass(frozen=True)
class ModelConfig:
    feature_channels: int = 64
    n_prev: int = 2
    num_queries: int = 128
    n_heads: int = 4
    n_points: int = 4
    query_channels: int | None = None  # defaults to feature_channels
    head_hidden: int = 64
    softmax_per_level: bool = False

    def validate(self, scene: SceneConfig) -> None:
        check_positive("model.feature_channels", self.feature_channels)
        if self.feature_channels % 4 != 0:
            raise ConfigurationError(
                f"model.feature_channels must be divisible by 4, got {self.feature_channels}"
            )
        if self.n_prev < 0:
            raise ConfigurationError(f"model.n_prev must be >= 0, got {self.n_prev}")
        if self.n_prev > scene.n_prev:
            raise ConfigurationError(
                f"model.n_prev {self.n_prev} exceeds scene.n_prev {scene.n_prev}"
            )
        cells = scene.cells_x * scene.cells_y
        if not 1 <= self.num_queries <= cells // 4:
            raise ConfigurationError(
                f"model.num_queries must stay sparse (1 <= k <= {cells // 4}), "
                f"got {self.num_queries}"
            )
        if self.feature_channels % self.n_heads != 0:
            raise ConfigurationError(
                f"model.feature_channels {self.feature_channels} not divisible by "
                f"n_heads {self.n_heads}"
            )
        check_positive("model.n_points", self.n_points)
        check_positive("model.head_hidden", self.head_hidden)

    @property
    def embed_channels(self) -> int:
        return self.query_channels if self.query_channels is not None else self.feature_channels


@dataclass(frozen=True)
class TrainingConfig:
    lambda_pred: float = 0.5
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    epochs: int = 6
    batch_size: int = 8
    seed: int = 0
    stop_gradient_prediction: bool = False
    n_train_episodes: int = 2000

    def validate(self) -> None:
        if self.lambda_pred < 0:
            raise ConfigurationError(f"training.lambda_pred must be >= 0, got {self.lambda_pred}")
        check_positive("training.learning_rate", self.learning_rate)
        if self.weight_decay < 0:
            raise ConfigurationError(f"training.weight_decay must be >= 0, got {self.weight_decay}")
        check_positive("training.epochs", self.epochs)
        check_positive("training.batch_size", self.batch_size)
        check_positive("training.n_train_episodes", self.n_train_episodes)


@dataclass(frozen=True)
class EvalConfig:
    distance_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    tp_error_threshold: float = 2.0
    moving_speed_cutoff: float = 1.0
    score_threshold: float = 0.1
    max_detections: int = 100
    n_eval_episodes: int = 500

    def validate(self) -> None:
        if not self.distance_thresholds or any(d <= 0 for d in self.distance_thresholds):
            raise ConfigurationError("eval.distance_thresholds must be positive and non-empty")
        if self.tp_error_threshold not in self.distance_thresholds:
            raise ConfigurationError(
                "eval.tp_error_threshold must be one of eval.distance_thresholds"
            )
        check_probability("eval.score_threshold", self.score_threshold)
        check_positive("eval.max_detections", self.max_detections)
        check_positive("eval.n_eval_episodes", self.n_eval_episodes)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "p2d"
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        self.scene.validate()
        self.model.validate(self.scene)
        self.training.validate()
        self.eval.validate()
        needs_prediction = self.mode in ("p2d", "p2d_no_pfa")
        if needs_prediction and self.model.n_prev < 2:
            raise ConfigurationError(
                f"mode {self.mode!r} needs at least two previous frames, "
                f"got model.n_prev={self.model.n_prev}"
            )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        def build(dc_type, section):
            if section is None:
                return dc_type()
            known = {f.name: f for f in fields(dc_type)}
            unknown = set(section) - set(known)
            if unknown:
                raise ConfigurationError(
                    f"unknown {dc_type.__name__} keys: {sorted(unknown)}"
                )
            kwargs = {}
            for name, value in section.items():
                if isinstance(value, list):
                    value = tuple(value)
                kwargs[name] = value
            return dc_type(**kwargs)

        extra = set(data) - {"mode", "scene", "model", "training", "eval"}
        if extra:
            raise ConfigurationError(f"unknown config sections: {sorted(extra)}")
        return cls(
            mode=data.get("mode", "p2d"),
            scene=build(SceneConfig, data.get("scene")),
            model=build(ModelConfig, data.get("model")),
            training=build(TrainingConfig, data.get("training")),
            eval=build(EvalConfig, data.get("eval")),
        )

    def replace(self, **updates: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **updates)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` (or ``mode=value``) overrides; values are
    parsed as JSON with plain-string fallback."""
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        node = data
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigurationError(f"unknown config section {key!r} in override {item!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigurationError(f"unknown config key {path!r}")
        node[keys[-1]] = _parse_value(raw)
    return ExperimentConfig.from_dict(data)
