"""Scikit-learn style estimator wrapping the temporal detector.

`TemporalBEVDetector` follows the sklearn contract: all constructor
arguments are stored verbatim, `get_params` / `set_params` / `clone` work,
`fit` consumes a list of episodes (X) and ignores y, `predict` returns
decoded boxes per episode, and `score` returns mAP.  This keeps the model
composable with the wider ecosystem (grid search over lambda_pred, etc.).
"""

from __future__ import annotations

from dataclasses import replace

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import EvalConfig, ExperimentConfig, ModelConfig, TrainingConfig
from .evaluation import collect_detections, run_evaluation
from .heads import DetectionBox
from .scenes import Episode, SceneConfig
from .training import train


def check_episodes(X) -> list[Episode]:
    """Validate that X is a non-empty list of consistent episodes."""
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("X must be a non-empty list of Episode objects")
    for i, ep in enumerate(X):
        if not isinstance(ep, Episode):
            raise TypeError(f"X[{i}] is {type(ep).__name__}, expected Episode")
    shape = X[0].frames[0].observation.shape
    for i, ep in enumerate(X):
        for f in ep.frames:
            if f.observation.shape != shape:
                raise ValueError(
                    f"X[{i}] observation shape {f.observation.shape} differs from {shape}"
                )
    return list(X)


class TemporalBEVDetector(BaseEstimator):
    """Trainable multi-frame BEV detector with a fit/predict interface.

    Parameters mirror the experiment config; see `predetect.config` for
    semantics.  The scene parameters must match the episodes passed to
    `fit` (they define the grid and class count).
    """

    def __init__(
        self,
        mode: str = "p2d",
        cells_x: int = 32,
        cells_y: int = 32,
        cell_size: float = 1.0,
        n_classes: int = 2,
        n_prev: int = 2,
        feature_channels: int = 64,
        num_queries: int = 128,
        n_heads: int = 4,
        n_points: int = 4,
        lambda_pred: float = 0.5,
        learning_rate: float = 2e-4,
        weight_decay: float = 1e-4,
        epochs: int = 6,
        batch_size: int = 8,
        seed: int = 0,
        stop_gradient_prediction: bool = False,
        score_threshold: float = 0.1,
        max_detections: int = 100,
    ):
        self.mode = mode
        self.cells_x = cells_x
        self.cells_y = cells_y
        self.cell_size = cell_size
        self.n_classes = n_classes
        self.n_prev = n_prev
        self.feature_channels = feature_channels
        self.num_queries = num_queries
        self.n_heads = n_heads
        self.n_points = n_points
        self.lambda_pred = lambda_pred
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.stop_gradient_prediction = stop_gradient_prediction
        self.score_threshold = score_threshold
        self.max_detections = max_detections

    def _experiment_config(self, scene_n_prev: int) -> ExperimentConfig:
        scene = SceneConfig(
            cells_x=self.cells_x,
            cells_y=self.cells_y,
            cell_size=self.cell_size,
            n_prev=max(scene_n_prev, 2),
            n_classes=self.n_classes,
        )
        return ExperimentConfig(
            mode=self.mode,
            scene=scene,
            model=ModelConfig(
                feature_channels=self.feature_channels,
                n_prev=self.n_prev,
                num_queries=self.num_queries,
                n_heads=self.n_heads,
                n_points=self.n_points,
            ),
            training=TrainingConfig(
                lambda_pred=self.lambda_pred,
                learning_rate=self.learning_rate,
                weight_decay=self.weight_decay,
                epochs=self.epochs,
                batch_size=self.batch_size,
                seed=self.seed,
                stop_gradient_prediction=self.stop_gradient_prediction,
                n_train_episodes=1,
            ),
            eval=EvalConfig(
                score_threshold=self.score_threshold,
                max_detections=self.max_detections,
            ),
        )

    def fit(self, X, y=None) -> "TemporalBEVDetector":
        """Train on a list of episodes; y is ignored (targets come from the
        episodes' current-frame ground truth)."""
        episodes = check_episodes(X)
        config = self._experiment_config(episodes[0].n_prev)
        config = config.replace(
            training=replace(config.training, n_train_episodes=len(episodes))
        )
        config.validate()
        self.model_, self.history_ = train(config, episodes)
        self.config_ = config
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This TemporalBEVDetector instance is not fitted yet; call fit first."
            )

    def predict(self, X) -> list[list[DetectionBox]]:
        """Decoded detections for each episode."""
        self._check_fitted()
        episodes = check_episodes(X)
        return collect_detections(self.model_, episodes, self.config_.eval)

    def predict_from_past(self, X) -> list[list[DetectionBox]]:
        """Prediction-only detections (current frame never observed)."""
        self._check_fitted()
        episodes = check_episodes(X)
        return collect_detections(
            self.model_, episodes, self.config_.eval, prediction_only=True
        )

    def score(self, X, y=None) -> float:
        """mAP of the detector on the episodes' current-frame ground truth."""
        self._check_fitted()
        episodes = check_episodes(X)
        reports = run_evaluation(self.model_, episodes, self.config_)
        return reports["detection"].map

    def evaluate(self, X) -> dict:
        """Full metric reports (all/moving, detection/prediction)."""
        self._check_fitted()
        episodes = check_episodes(X)
        return run_evaluation(self.model_, episodes, self.config_)
