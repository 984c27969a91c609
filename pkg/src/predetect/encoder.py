"""Compact convolutional encoder from observation grids to BEV features.

Resolution is preserved (stride-1 3x3 convolutions) because downstream heads
and the attention module index grid cells directly.  The final feature keeps
one training-free passthrough channel holding the summed occupancy channels,
so alignment can be checked without any learned weights.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .alignment import ALIGNED, RAW_EGO, BEVFeature, relative_transform, warp_bev
from .scenes import Episode, GridSpec


class BEVEncoder(nn.Module):
    """Four 3x3 stride-1 conv layers, in_channels -> 32 -> 64 -> 64 ->
    feature_channels - 1, plus the occupancy passthrough channel appended
    last.  The same weights process every timestep."""

    def __init__(self, in_channels: int, n_occupancy: int, feature_channels: int = 64):
        super().__init__()
        if feature_channels < 2:
            raise ValueError("feature_channels must leave room for the passthrough channel")
        if n_occupancy < 1 or n_occupancy > in_channels:
            raise ValueError(f"n_occupancy {n_occupancy} incompatible with in_channels {in_channels}")
        self.in_channels = in_channels
        self.n_occupancy = n_occupancy
        self.feature_channels = feature_channels
        widths = [in_channels, 32, 64, 64, feature_channels - 1]
        layers: list[nn.Module] = []
        for i in range(4):
            layers.append(nn.Conv2d(widths[i], widths[i + 1], kernel_size=3, padding=1))
            if i < 3:
                layers.append(nn.ReLU(inplace=True))
        self.convs = nn.Sequential(*layers)

    def forward(self, observations: torch.Tensor) -> torch.Tensor:
        """observations: [B, C_in, X, Y] -> features [B, C_f, X, Y]."""
        if observations.ndim != 4 or observations.shape[1] != self.in_channels:
            raise ValueError(
                f"expected [B, {self.in_channels}, X, Y] observations, "
                f"got shape {tuple(observations.shape)}"
            )
        learned = self.convs(observations)
        passthrough = observations[:, : self.n_occupancy].sum(dim=1, keepdim=True)
        return torch.cat([learned, passthrough], dim=1)


def encode_frame(observation: np.ndarray | torch.Tensor, encoder: BEVEncoder,
                 timestep_index: int = 0) -> BEVFeature:
    """Encode one [X, Y, C_in] observation into a raw-ego BEVFeature."""
    obs = torch.as_tensor(np.asarray(observation))
    if obs.ndim != 3 or obs.shape[2] != encoder.in_channels:
        raise ValueError(
            f"expected [X, Y, {encoder.in_channels}] observation, got {tuple(obs.shape)}"
        )
    batched = obs.permute(2, 0, 1).unsqueeze(0).to(next(encoder.parameters()).dtype)
    features = encoder(batched)[0].permute(1, 2, 0)
    return BEVFeature(features, timestep_index=timestep_index, frame_tag=RAW_EGO)


def encode_sequence(episode: Episode, encoder: BEVEncoder,
                    grid: GridSpec | None = None) -> list[BEVFeature]:
    """Encode every frame and warp all previous frames into the current
    frame's coordinates.  Returns features oldest-first, all tagged
    aligned-to-current; the current frame's feature is returned unwarped."""
    if len(episode.frames) < 3:
        raise ValueError(f"need at least 3 frames, got {len(episode.frames)}")
    if grid is None:
        cells_x, cells_y = episode.frames[0].observation.shape[:2]
        grid = GridSpec.centered(cells_x, cells_y, 1.0)
    pose_curr = episode.current.ego_pose
    aligned: list[BEVFeature] = []
    for t, frame in enumerate(episode.frames):
        feature = encode_frame(frame.observation, encoder, timestep_index=t + 1)
        if frame is episode.current:
            aligned.append(BEVFeature(feature.data, feature.timestep_index, ALIGNED))
        else:
            transform = relative_transform(frame.ego_pose, pose_curr)
            aligned.append(warp_bev(feature, transform, grid))
    return aligned


def align_features(features: torch.Tensor, poses: torch.Tensor, grid: GridSpec,
                   target_poses: torch.Tensor | np.ndarray | None = None) -> torch.Tensor:
    """Batched alignment used by the training path.

    features: [B, T, C, X, Y] raw per-frame features; poses: [B, T, 3]
    (x, y, yaw) world-frame poses.  Warps every frame into the target
    frame's coordinates (by default the last frame's pose) and returns
    [B, T, C, X, Y].  Frames whose transform is the identity pass through
    untouched.
    """
    from .alignment import bilinear_sample

    b, t, c, nx, ny = features.shape
    pose_arr = np.asarray(poses, dtype=np.float64)  # [B, T, 3]
    target = (
        pose_arr[:, -1, :]
        if target_poses is None
        else np.asarray(target_poses, dtype=np.float64).reshape(b, 3)
    )
    rot = target[:, None, 2] - pose_arr[..., 2]  # [B, T]
    dx = target[:, None, 0] - pose_arr[..., 0]
    dy = target[:, None, 1] - pose_arr[..., 1]
    cp, sp = np.cos(pose_arr[..., 2]), np.sin(pose_arr[..., 2])
    tx = cp * dx + sp * dy  # translation expressed in each source ego frame
    ty = -sp * dx + cp * dy

    # Destination cell centers in metric coordinates, [X*Y, 2].
    ii = np.arange(nx, dtype=np.float64) + 0.5
    jj = np.arange(ny, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(ii, jj, indexing="ij")
    centers = np.stack([gx, gy], axis=-1).reshape(-1, 2) * grid.cell_size
    centers += np.asarray(grid.origin)

    out = []
    for k in range(t):
        if not (rot[:, k].any() or tx[:, k].any() or ty[:, k].any()):
            out.append(features[:, k])
            continue
        cr = np.cos(rot[:, k])[:, None]
        sr = np.sin(rot[:, k])[:, None]
        px = cr * centers[None, :, 0] - sr * centers[None, :, 1] + tx[:, k, None]
        py = sr * centers[None, :, 0] + cr * centers[None, :, 1] + ty[:, k, None]
        cells = (np.stack([px, py], axis=-1) - np.asarray(grid.origin)) / grid.cell_size
        points = torch.as_tensor(cells, dtype=features.dtype, device=features.device)
        out.append(bilinear_sample(features[:, k], points).reshape(b, c, nx, ny))
    return torch.stack(out, dim=1)
