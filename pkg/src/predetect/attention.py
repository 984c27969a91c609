"""Deformable cross-attention from sparse queries into stacked temporal
BEV features, scattered back to grid shape with zero padding.

Each query attends at learned offsets around its reference point, sampling
every temporal feature level bilinearly.  Positional (sinusoidal) and
temporal (learned per-level) embeddings are added to the value maps before
sampling.  Attention weights are softmax-normalized per head, jointly over
levels x points by default; a per-level softmax with a plain sum over
levels is available as `softmax_per_level` for the summed-per-timestep
formulation.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .alignment import ALIGNED, BEVFeature, bilinear_sample
from .queries import QuerySet


def sinusoidal_embedding_2d(cells_x: int, cells_y: int, channels: int,
                            temperature: float = 10000.0) -> torch.Tensor:
    """Fixed 2D sine/cosine position embedding, shape [channels, X, Y]."""
    if channels % 4 != 0:
        raise ValueError(f"channels must be divisible by 4, got {channels}")
    half = channels // 2
    freq = torch.arange(half // 2, dtype=torch.float64)
    inv = 1.0 / temperature ** (2 * freq / half)
    xs = torch.arange(cells_x, dtype=torch.float64)
    ys = torch.arange(cells_y, dtype=torch.float64)
    angle_x = xs[:, None] * inv[None, :]  # [X, half/2]
    angle_y = ys[:, None] * inv[None, :]
    emb_x = torch.cat([angle_x.sin(), angle_x.cos()], dim=1)  # [X, half]
    emb_y = torch.cat([angle_y.sin(), angle_y.cos()], dim=1)
    emb = torch.cat(
        [
            emb_x[:, None, :].expand(cells_x, cells_y, half),
            emb_y[None, :, :].expand(cells_x, cells_y, half),
        ],
        dim=2,
    )
    return emb.permute(2, 0, 1).to(torch.float32)


class TemporalDeformableAttention(nn.Module):
    """Multi-head deformable attention over temporal feature levels."""

    def __init__(
        self,
        feature_channels: int,
        query_channels: int,
        n_levels: int,
        cells_x: int,
        cells_y: int,
        n_heads: int = 4,
        n_points: int = 4,
        softmax_per_level: bool = False,
    ):
        super().__init__()
        if feature_channels % n_heads != 0:
            raise ValueError(
                f"feature_channels {feature_channels} not divisible by n_heads {n_heads}"
            )
        self.feature_channels = feature_channels
        self.query_channels = query_channels
        self.n_levels = n_levels
        self.n_heads = n_heads
        self.n_points = n_points
        self.head_dim = feature_channels // n_heads
        self.softmax_per_level = softmax_per_level

        self.value_proj = nn.Linear(feature_channels, feature_channels)
        self.offset_proj = nn.Linear(query_channels, n_heads * n_levels * n_points * 2)
        self.weight_proj = nn.Linear(query_channels, n_heads * n_levels * n_points)
        self.output_proj = nn.Linear(feature_channels, feature_channels)
        self.temporal_embedding = nn.Parameter(torch.zeros(n_levels, feature_channels))
        self.register_buffer(
            "position_embedding", sinusoidal_embedding_2d(cells_x, cells_y, feature_channels)
        )
        self._reset_parameters()

    def _reset_parameters(self):
        # Deformable-DETR style: zero offset weights with a ring-pattern bias
        # spreads initial sample points; uniform attention at init.
        nn.init.zeros_(self.offset_proj.weight)
        thetas = torch.arange(self.n_heads, dtype=torch.float32) * (2 * math.pi / self.n_heads)
        ring = torch.stack([thetas.cos(), thetas.sin()], dim=-1)
        ring = ring / ring.abs().max(-1, keepdim=True).values
        ring = ring.view(self.n_heads, 1, 1, 2).repeat(1, self.n_levels, self.n_points, 1)
        for p in range(self.n_points):
            ring[:, :, p, :] *= p + 1
        with torch.no_grad():
            self.offset_proj.bias.copy_(ring.reshape(-1))
        nn.init.zeros_(self.weight_proj.weight)
        nn.init.zeros_(self.weight_proj.bias)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.zeros_(self.value_proj.bias)
        nn.init.xavier_uniform_(self.output_proj.weight)
        nn.init.zeros_(self.output_proj.bias)
        nn.init.normal_(self.temporal_embedding, std=0.02)

    def attention_weights(self, queries: torch.Tensor) -> torch.Tensor:
        """Normalized attention weights [..., n_heads, n_levels, n_points]."""
        logits = self.weight_proj(queries).reshape(
            *queries.shape[:-1], self.n_heads, self.n_levels, self.n_points
        )
        if self.softmax_per_level:
            return torch.softmax(logits, dim=-1)
        flat = logits.reshape(*logits.shape[:-2], self.n_levels * self.n_points)
        return torch.softmax(flat, dim=-1).reshape(logits.shape)

    def forward(self, queries: torch.Tensor, ref_points: torch.Tensor,
                value_maps: torch.Tensor) -> torch.Tensor:
        """queries [B, K, C_q], ref_points [B, K, 2] (continuous cell
        coordinates), value_maps [B, T, C_f, X, Y] -> [B, K, C_f]."""
        b, k, _ = queries.shape
        _, t, c, nx, ny = value_maps.shape
        if t != self.n_levels:
            raise ValueError(f"expected {self.n_levels} temporal levels, got {t}")
        h, hd, p = self.n_heads, self.head_dim, self.n_points

        emb = self.position_embedding.to(value_maps.dtype) + \
            self.temporal_embedding[:, :, None, None].to(value_maps.dtype)
        values = value_maps + emb.unsqueeze(0)
        # Per-cell linear value projection, then split into heads.
        values = values.permute(0, 1, 3, 4, 2)  # [B, T, X, Y, C]
        values = self.value_proj(values)
        values = values.reshape(b, t, nx, ny, h, hd).permute(0, 1, 4, 5, 2, 3)  # [B,T,H,hd,X,Y]

        offsets = self.offset_proj(queries).reshape(b, k, h, t, p, 2)
        weights = self.attention_weights(queries)  # [B, K, H, T, P]
        locations = ref_points[:, :, None, None, None, :] + offsets  # [B,K,H,T,P,2]

        flat_values = values.reshape(b * t * h, hd, nx, ny)
        flat_points = locations.permute(0, 3, 2, 1, 4, 5).reshape(b * t * h, k * p, 2)
        samples = bilinear_sample(flat_values, flat_points)  # [B*T*H, hd, K*P]
        samples = samples.reshape(b, t, h, hd, k, p)

        # [B, K, H, T, P] weights against [B, T, H, hd, K, P] samples.
        out = torch.einsum("bkhtp,bthdkp->bkhd", weights, samples)
        out = out.reshape(b, k, h * hd)
        return self.output_proj(out)


def deform_attn(query: torch.Tensor, ref_point: torch.Tensor | tuple[float, float],
                value_maps: torch.Tensor, module: TemporalDeformableAttention) -> torch.Tensor:
    """Single-query wrapper: query [C_q], ref_point (x, y) in cell
    coordinates, value_maps [T, X, Y, C_f] channel-last -> [C_f]."""
    ref = torch.as_tensor(ref_point, dtype=query.dtype).reshape(1, 1, 2)
    maps = value_maps.permute(0, 3, 1, 2).unsqueeze(0)
    return module(query.reshape(1, 1, -1), ref, maps)[0, 0]


def aggregate_to_grid(positions: torch.Tensor, outputs: torch.Tensor,
                      cells_x: int, cells_y: int) -> torch.Tensor:
    """Scatter per-query outputs onto an all-zero grid (zero padding).

    positions [B, K, 2] integer cells, outputs [B, K, C] -> [B, C, X, Y];
    cells without a query stay exactly zero.
    """
    b, k, c = outputs.shape
    flat_idx = positions[..., 0] * cells_y + positions[..., 1]  # [B, K]
    grid = outputs.new_zeros(b, c, cells_x * cells_y)
    grid = grid.scatter(2, flat_idx.unsqueeze(1).expand(b, c, k), outputs.transpose(1, 2))
    return grid.reshape(b, c, cells_x, cells_y)


def attend_and_scatter(queries: QuerySet, features: list[BEVFeature],
                       module: TemporalDeformableAttention) -> torch.Tensor:
    """Per-sample aggregation: attend from each query into all temporal
    features and scatter results back to grid shape.

    Reference points are query cell centers.  Returns [X, Y, C_f] with
    support exactly on the query positions.
    """
    for f in features:
        if f.frame_tag != ALIGNED:
            raise ValueError(f"feature at timestep {f.timestep_index} is not aligned-to-current")
    maps = torch.stack([f.data.permute(2, 0, 1) for f in features]).unsqueeze(0)  # [1,T,C,X,Y]
    cells_x, cells_y = features[0].data.shape[:2]
    ref = queries.positions.to(maps.dtype) + 0.5
    out = module(queries.embeddings.unsqueeze(0), ref.unsqueeze(0), maps)  # [1, K, C]
    grid = aggregate_to_grid(queries.positions.unsqueeze(0), out, cells_x, cells_y)
    return grid[0].permute(1, 2, 0)
