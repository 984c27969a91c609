"""Full temporal detector: encoder, heads, query selection, and attention
wired per experiment mode.

Modes
-----
p2d
    Prediction head over previous frames seeds sparse queries; deformable
    attention aggregates all temporal features; the detection head sees the
    aggregated feature concatenated with the current frame's feature.
baseline_concat
    No prediction, no attention: all aligned frames are channel-concatenated
    straight into the detection head.
p2d_no_pfa
    Prediction head kept, attention dropped: the raw prediction output is
    concatenated with the aligned features for the detection head.
baseline_plus_pfa
    Attention kept, prediction head dropped: queries come from an auxiliary
    detection-style head over the concatenated features (which include the
    current frame), supervised as part of the detection loss.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .attention import TemporalDeformableAttention, aggregate_to_grid
from .config import ExperimentConfig
from .encoder import BEVEncoder, align_features
from .heads import REG_CHANNELS, DenseDetectionHead
from .queries import QueryEncoder, select_queries_batched
from .scenes import Episode, GridSpec


class TemporalDetector(nn.Module):
    """Multi-frame BEV detector; the active submodules depend on the mode."""

    def __init__(self, config: ExperimentConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.mode = config.mode
        scene, model = config.scene, config.model
        self.grid = scene.grid()
        self.n_frames = model.n_prev + 1
        self.n_classes = scene.n_classes
        self.num_queries = model.num_queries
        self.stop_gradient_prediction = config.training.stop_gradient_prediction
        c_f = model.feature_channels
        c_o = scene.n_classes + REG_CHANNELS

        self.encoder = BEVEncoder(scene.in_channels, scene.n_classes, c_f)

        self.prediction_head: DenseDetectionHead | None = None
        self.aux_head: DenseDetectionHead | None = None
        self.query_encoder: QueryEncoder | None = None
        self.attention: TemporalDeformableAttention | None = None

        if self.mode in ("p2d", "p2d_no_pfa"):
            self.prediction_head = DenseDetectionHead(
                (self.n_frames - 1) * c_f, scene.n_classes, model.head_hidden
            )
        if self.mode == "baseline_plus_pfa":
            self.aux_head = DenseDetectionHead(
                self.n_frames * c_f, scene.n_classes, model.head_hidden
            )
        if self.mode in ("p2d", "baseline_plus_pfa"):
            self.query_encoder = QueryEncoder(scene.n_classes, model.embed_channels)
            self.attention = TemporalDeformableAttention(
                feature_channels=c_f,
                query_channels=model.embed_channels,
                n_levels=self.n_frames,
                cells_x=scene.cells_x,
                cells_y=scene.cells_y,
                n_heads=model.n_heads,
                n_points=model.n_points,
                softmax_per_level=model.softmax_per_level,
            )
            det_in = 2 * c_f
        elif self.mode == "baseline_concat":
            det_in = self.n_frames * c_f
        else:  # p2d_no_pfa
            det_in = self.n_frames * c_f + c_o
        self.detection_head = DenseDetectionHead(det_in, scene.n_classes, model.head_hidden)

    # ------------------------------------------------------------------
    def encode_aligned(self, observations: torch.Tensor, poses: torch.Tensor) -> torch.Tensor:
        """Encode the last n_frames observations and align them to the
        current frame.  observations [B, T_ep, C_in, X, Y] -> [B, T, C_f, X, Y]."""
        t_ep = observations.shape[1]
        if t_ep < self.n_frames:
            raise ValueError(f"need {self.n_frames} frames, episode has {t_ep}")
        obs = observations[:, t_ep - self.n_frames :]
        pose = poses[:, t_ep - self.n_frames :]
        b, t, c_in, nx, ny = obs.shape
        feats = self.encoder(obs.reshape(b * t, c_in, nx, ny))
        feats = feats.reshape(b, t, -1, nx, ny)
        return align_features(feats, pose, self.grid)

    def forward(self, observations: torch.Tensor, poses: torch.Tensor,
                return_intermediates: bool = False) -> dict[str, torch.Tensor]:
        """Run detection.  Returns NCHW tensors: det_heatmaps [B, n_cls, X, Y],
        det_regression [B, 8, X, Y], plus pred_/aux_ outputs when the mode
        produces them and query intermediates on request."""
        aligned = self.encode_aligned(observations, poses)
        b, t, c_f, nx, ny = aligned.shape
        out: dict[str, torch.Tensor] = {}

        pred_hm = pred_reg = None
        if self.prediction_head is not None:
            prev = aligned[:, : t - 1]
            if self.stop_gradient_prediction:
                prev = prev.detach()
            pred_hm, pred_reg = self.prediction_head(prev.reshape(b, (t - 1) * c_f, nx, ny))
            out["pred_heatmaps"] = pred_hm
            out["pred_regression"] = pred_reg

        if self.mode == "baseline_concat":
            det_in = aligned.reshape(b, t * c_f, nx, ny)
        elif self.mode == "p2d_no_pfa":
            det_in = torch.cat(
                [aligned.reshape(b, t * c_f, nx, ny), pred_hm, pred_reg], dim=1
            )
        else:
            if self.mode == "baseline_plus_pfa":
                src_hm, src_reg = self.aux_head(aligned.reshape(b, t * c_f, nx, ny))
                out["aux_heatmaps"] = src_hm
                out["aux_regression"] = src_reg
            else:
                src_hm, src_reg = pred_hm, pred_reg
            positions, embeddings = select_queries_batched(
                src_hm, src_reg, self.num_queries, self.query_encoder
            )
            ref = positions.to(embeddings.dtype) + 0.5
            attended = self.attention(embeddings, ref, aligned)
            agg = aggregate_to_grid(positions, attended, nx, ny)
            det_in = torch.cat([agg, aligned[:, -1]], dim=1)
            if return_intermediates:
                out["query_positions"] = positions
                out["aggregated"] = agg
        det_hm, det_reg = self.detection_head(det_in)
        out["det_heatmaps"] = det_hm
        out["det_regression"] = det_reg
        return out

    def forward_prediction(self, observations_prev: torch.Tensor,
                           poses: torch.Tensor) -> dict[str, torch.Tensor]:
        """Prediction-only path: forecast current-frame objects without the
        current observation.

        observations_prev: [B, T-1, C_in, X, Y] previous frames only; poses:
        [B, T, 3] including the current pose (ego odometry is available
        without the current image).
        """
        if self.prediction_head is None:
            raise ValueError(f"mode {self.mode!r} has no prediction head")
        t_prev = self.n_frames - 1
        if observations_prev.shape[1] < t_prev:
            raise ValueError(
                f"need {t_prev} previous frames, got {observations_prev.shape[1]}"
            )
        obs = observations_prev[:, observations_prev.shape[1] - t_prev :]
        pose_all = np.asarray(poses, dtype=np.float64)
        pose_prev = pose_all[:, pose_all.shape[1] - self.n_frames : -1]
        target = pose_all[:, -1]
        b, t, c_in, nx, ny = obs.shape
        feats = self.encoder(obs.reshape(b * t, c_in, nx, ny)).reshape(b, t, -1, nx, ny)
        aligned_prev = align_features(
            feats, torch.as_tensor(pose_prev), self.grid, target_poses=target
        )
        pred_hm, pred_reg = self.prediction_head(
            aligned_prev.reshape(b, t * aligned_prev.shape[2], nx, ny)
        )
        return {"pred_heatmaps": pred_hm, "pred_regression": pred_reg}


def episode_tensors(episodes: list[Episode]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack episodes into model inputs: observations [N, T, C_in, X, Y]
    float32 and poses [N, T, 3] float64."""
    obs = torch.from_numpy(
        np.stack([[f.observation.transpose(2, 0, 1) for f in ep.frames] for ep in episodes])
    )
    poses = torch.from_numpy(
        np.array(
            [[[f.ego_pose.x, f.ego_pose.y, f.ego_pose.yaw] for f in ep.frames] for ep in episodes],
            dtype=np.float64,
        )
    )
    return obs, poses
