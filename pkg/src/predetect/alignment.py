"""Ego-motion compensation: SE(2) transforms and differentiable BEV warping.

Previous-frame feature grids are expressed in their own ego frames.  Before
temporal fusion they are resampled into the current frame's coordinates so a
static world point stays at the same cell across timesteps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .scenes import EgoPose, GridSpec, wrap_angle

RAW_EGO = "raw-ego"
ALIGNED = "aligned-to-current"


@dataclass(frozen=True)
class SE2Transform:
    """Rigid planar transform p' = R(rotation) @ p + translation."""

    rotation: float
    translation: tuple[float, float]

    @classmethod
    def identity(cls) -> "SE2Transform":
        return cls(0.0, (0.0, 0.0))

    @property
    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 matrix."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array(
            [
                [c, -s, self.translation[0]],
                [s, c, self.translation[1]],
                [0.0, 0.0, 1.0],
            ]
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape [..., 2]."""
        pts = np.asarray(points, dtype=np.float64)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        x = c * pts[..., 0] - s * pts[..., 1] + self.translation[0]
        y = s * pts[..., 0] + c * pts[..., 1] + self.translation[1]
        return np.stack([x, y], axis=-1)

    def compose(self, other: "SE2Transform") -> "SE2Transform":
        """Return the transform equivalent to applying `other` first, then self."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        tx = c * other.translation[0] - s * other.translation[1] + self.translation[0]
        ty = s * other.translation[0] + c * other.translation[1] + self.translation[1]
        return SE2Transform(wrap_angle(self.rotation + other.rotation), (tx, ty))

    def inverse(self) -> "SE2Transform":
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        tx, ty = self.translation
        return SE2Transform(wrap_angle(-self.rotation), (-(c * tx + s * ty), -(-s * tx + c * ty)))

    @property
    def is_identity(self) -> bool:
        return self.rotation == 0.0 and self.translation == (0.0, 0.0)


@dataclass
class BEVFeature:
    """A per-timestep feature grid [cells_x, cells_y, channels] tagged with
    the frame its coordinates refer to."""

    data: torch.Tensor
    timestep_index: int
    frame_tag: str = RAW_EGO

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"feature data must be [X, Y, C], got shape {tuple(self.data.shape)}")
        if self.frame_tag not in (RAW_EGO, ALIGNED):
            raise ValueError(f"unknown frame tag {self.frame_tag!r}")


def relative_transform(pose_prev: EgoPose, pose_curr: EgoPose) -> SE2Transform:
    """Transform mapping current-frame ego coordinates into the previous
    frame's ego coordinates (the sampling transform for warping)."""
    rotation = wrap_angle(pose_curr.yaw - pose_prev.yaw)
    dx = pose_curr.x - pose_prev.x
    dy = pose_curr.y - pose_prev.y
    c, s = math.cos(-pose_prev.yaw), math.sin(-pose_prev.yaw)
    return SE2Transform(rotation, (c * dx - s * dy, s * dx + c * dy))


def bilinear_sample(values: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample feature grids at continuous cell coordinates.

    values: [..., C, X, Y]; points: [..., P, 2] where point (x, y) in cell
    units addresses cell centers at half-integers (cell (i, j) center is
    (i + 0.5, j + 0.5)).  Samples whose 4-neighborhood falls outside the
    grid contribute zero (zero padding).  Returns [..., C, P].
    """
    *batch, channels, nx, ny = values.shape
    flat_values = values.reshape(-1, channels, nx * ny)
    n = flat_values.shape[0]
    pts = points.reshape(n, -1, 2)
    p = pts.shape[1]

    x = pts[..., 0] - 0.5
    y = pts[..., 1] - 0.5
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    fx = (x - x0).unsqueeze(1)  # [n, 1, p]
    fy = (y - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()

    def gather(ix: torch.Tensor, iy: torch.Tensor) -> torch.Tensor:
        in_bounds = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        idx = ix.clamp(0, nx - 1) * ny + iy.clamp(0, ny - 1)
        out = flat_values.gather(2, idx.unsqueeze(1).expand(n, channels, p))
        return out * in_bounds.unsqueeze(1).to(values.dtype)

    one = values.new_tensor(1.0)
    result = (
        gather(x0, y0) * (one - fx) * (one - fy)
        + gather(x0, y0 + 1) * (one - fx) * fy
        + gather(x0 + 1, y0) * fx * (one - fy)
        + gather(x0 + 1, y0 + 1) * fx * fy
    )
    return result.reshape(*batch, channels, p)


def warp_grid_points(transform: SE2Transform, grid: GridSpec, *, dtype=torch.float32) -> torch.Tensor:
    """Locations, in source-frame cell coordinates, of every destination
    cell center under `transform`.  Returns [cells_x * cells_y, 2]."""
    ii = np.arange(grid.cells_x, dtype=np.float64) + 0.5
    jj = np.arange(grid.cells_y, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(ii, jj, indexing="ij")
    centers = np.stack([gx, gy], axis=-1).reshape(-1, 2) * grid.cell_size
    centers += np.asarray(grid.origin)
    source = transform.apply(centers)
    source_cells = (source - np.asarray(grid.origin)) / grid.cell_size
    return torch.as_tensor(source_cells, dtype=dtype)


def warp_bev(feature: BEVFeature, transform: SE2Transform, grid: GridSpec) -> BEVFeature:
    """Resample a raw-ego feature grid into the current frame's coordinates.

    Output cell (i, j) holds the bilinear sample of the input at the
    transformed location of that cell's center; out-of-bounds samples are
    zero.  Identity transforms return the input values bit-for-bit.
    """
    if feature.frame_tag != RAW_EGO:
        raise ValueError(f"expected a {RAW_EGO!r} feature, got {feature.frame_tag!r}")
    data = feature.data
    if data.shape[0] != grid.cells_x or data.shape[1] != grid.cells_y:
        raise ValueError(
            f"feature grid {tuple(data.shape[:2])} does not match spec "
            f"({grid.cells_x}, {grid.cells_y})"
        )
    if transform.is_identity:
        return BEVFeature(data, feature.timestep_index, ALIGNED)
    points = warp_grid_points(transform, grid, dtype=data.dtype)
    values = data.permute(2, 0, 1)  # [C, X, Y]
    sampled = bilinear_sample(values, points)  # [C, X*Y]
    warped = sampled.reshape(-1, grid.cells_x, grid.cells_y).permute(1, 2, 0)
    return BEVFeature(warped, feature.timestep_index, ALIGNED)
