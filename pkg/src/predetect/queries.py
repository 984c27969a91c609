"""Heatmap-driven sparse query selection.

The per-class heatmaps collapse into a class-agnostic map by an elementwise
max over classes; the k cells with the largest values become object queries.
The adaptive threshold is the k-th largest value, so the query count stays
fixed while the spatial pattern follows the predicted objects.  Ties are
broken by row-major cell index so selection is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .heads import REG_CHANNELS, DenseOutput


@dataclass
class QueryMask:
    """Binary selection mask with its adaptive threshold."""

    mask: torch.Tensor  # [X, Y] bool
    threshold: float
    k: int


@dataclass
class QuerySet:
    """Selected query positions (integer cells, row-major order of selection)
    and their embeddings."""

    positions: torch.Tensor  # [K, 2] long
    embeddings: torch.Tensor  # [K, C_q]


class QueryEncoder(nn.Module):
    """Linear projection from masked per-cell attribute vectors (per-class
    heatmaps + regression channels) to query embeddings."""

    def __init__(self, n_classes: int, embed_channels: int):
        super().__init__()
        self.n_classes = n_classes
        self.embed_channels = embed_channels
        self.proj = nn.Linear(n_classes + REG_CHANNELS, embed_channels)

    def forward(self, attributes: torch.Tensor) -> torch.Tensor:
        return self.proj(attributes)


def class_agnostic_heatmap(heatmaps: torch.Tensor) -> torch.Tensor:
    """Elementwise max over class channels: [X, Y, n_classes] -> [X, Y]."""
    if heatmaps.ndim != 3:
        raise ValueError(f"expected [X, Y, n_classes], got shape {tuple(heatmaps.shape)}")
    return heatmaps.max(dim=2).values


def topk_cells(values: torch.Tensor, k: int) -> tuple[torch.Tensor, float]:
    """Indices (flat, row-major) of the k largest values with deterministic
    tie-breaking by index; also returns the k-th largest value."""
    flat = values.reshape(-1)
    if not 1 <= k <= flat.numel():
        raise ValueError(f"k must be in [1, {flat.numel()}], got {k}")
    # Stable sort on descending values keeps row-major order among ties.
    order = torch.argsort(flat, descending=True, stable=True)
    selected = order[:k]
    threshold = float(flat[selected[-1]])
    return selected, threshold


def select_queries(h_ca: torch.Tensor, prediction: DenseOutput, k: int,
                   encoder: QueryEncoder) -> tuple[QueryMask, QuerySet]:
    """Build the top-k query mask and embed the masked prediction attributes.

    h_ca: [X, Y] class-agnostic heatmap.  The k selected cells' full
    attribute vectors (heatmaps ++ regression) are projected to embeddings;
    gradients flow to the prediction output only at selected cells.
    """
    cells_x, cells_y = h_ca.shape
    selected, threshold = topk_cells(h_ca.detach(), k)
    mask = torch.zeros(cells_x * cells_y, dtype=torch.bool, device=h_ca.device)
    mask[selected] = True
    positions = torch.stack(
        [torch.div(selected, cells_y, rounding_mode="floor"), selected % cells_y], dim=1
    )
    attributes = torch.cat([prediction.heatmaps, prediction.regression], dim=2)
    flat_attrs = attributes.reshape(cells_x * cells_y, -1)
    embeddings = encoder(flat_attrs[selected])
    return (
        QueryMask(mask=mask.reshape(cells_x, cells_y), threshold=threshold, k=k),
        QuerySet(positions=positions, embeddings=embeddings),
    )


def select_queries_batched(heatmaps: torch.Tensor, regression: torch.Tensor, k: int,
                           encoder: QueryEncoder) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched NCHW variant for the training path.

    heatmaps [B, n_classes, X, Y], regression [B, 8, X, Y] ->
    (positions [B, K, 2] long, embeddings [B, K, C_q]).
    """
    b, _, cells_x, cells_y = heatmaps.shape
    h_ca = heatmaps.max(dim=1).values.reshape(b, -1)  # [B, X*Y]
    order = torch.argsort(h_ca.detach(), dim=1, descending=True, stable=True)
    selected = order[:, :k]  # [B, K]
    positions = torch.stack(
        [torch.div(selected, cells_y, rounding_mode="floor"), selected % cells_y], dim=2
    )
    attrs = torch.cat([heatmaps, regression], dim=1)  # [B, n_cls+8, X, Y]
    flat = attrs.flatten(2).transpose(1, 2)  # [B, X*Y, n_cls+8]
    gathered = flat.gather(1, selected.unsqueeze(-1).expand(-1, -1, flat.shape[2]))
    return positions, encoder(gathered)
