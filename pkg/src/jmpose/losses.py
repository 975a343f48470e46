"""Training objectives."""

from __future__ import annotations

import torch


def heatmap_loss(gt: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every batch entry, channel and cell."""
    if gt.shape != pred.shape:
        raise ValueError(f"heatmap shapes differ: {tuple(gt.shape)} vs {tuple(pred.shape)}")
    return ((pred - gt) ** 2).mean()


def total_loss(l_h: torch.Tensor, l_io, alpha: float, num_layers: int | None = None) -> torch.Tensor:
    """``l_h + alpha * sum(l_io)``; with ``alpha == 0`` the result is ``l_h`` itself."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    l_io = list(l_io)
    if num_layers is not None and len(l_io) != num_layers:
        raise ValueError(f"expected {num_layers} orthogonality terms, got {len(l_io)}")
    if alpha == 0 or not l_io:
        return l_h
    return l_h + alpha * torch.stack([torch.as_tensor(t, dtype=l_h.dtype) for t in l_io]).sum()
