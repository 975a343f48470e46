"""Toy per-frame heatmap encoder and the learned temporal heatmap aggregation."""

from __future__ import annotations

import torch
import torch.nn as nn


class ToyEncoder(nn.Module):
    """Four conv stages (16 -> 32 -> 64 -> K) with an overall stride of 4.

    The last stage is linear; heatmaps are regressed with MSE so they need not be
    bounded.
    """

    def __init__(self, num_joints: int = 15, in_channels: int = 3, widths=(16, 32, 64)):
        super().__init__()
        c1, c2, c3 = widths
        self.stages = nn.Sequential(
            nn.Conv2d(in_channels, c1, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c2, c3, 3, padding=2, dilation=2),
            nn.ReLU(),
            nn.Conv2d(c3, num_joints, 3, padding=1),
        )
        self.num_joints = num_joints
        self.stride = 4

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(N, C, H, W) frames -> (N, K, H/4, W/4) heatmaps."""
        if frames.shape[-2] % self.stride or frames.shape[-1] % self.stride:
            raise ValueError(f"frame size {tuple(frames.shape[-2:])} is not a multiple of {self.stride}")
        return self.stages(frames)


def extract_frame_heatmaps(frames: torch.Tensor, encoder: ToyEncoder) -> torch.Tensor:
    """Apply the encoder to every frame of (N, T, C, H, W) clips -> (N, T, K, h, w)."""
    N, T = frames.shape[:2]
    hm = encoder(frames.reshape(N * T, *frames.shape[2:]))
    return hm.reshape(N, T, *hm.shape[1:])


class HeatmapAggregator(nn.Module):
    """1x1 convolution over the channel-stacked per-frame heatmaps ((2d+1)K -> K).

    Initialised to copy the keyframe block, so an untrained aggregator is the
    identity on the keyframe heatmaps.
    """

    def __init__(self, num_joints: int = 15, num_frames: int = 5, bias: bool = True):
        super().__init__()
        self.num_joints = num_joints
        self.num_frames = num_frames
        self.conv = nn.Conv2d(num_frames * num_joints, num_joints, 1, bias=bias)
        self.reset_to_keyframe()

    @torch.no_grad()
    def reset_to_keyframe(self):
        self.conv.weight.zero_()
        center = self.num_frames // 2
        for k in range(self.num_joints):
            self.conv.weight[k, center * self.num_joints + k, 0, 0] = 1.0
        if self.conv.bias is not None:
            self.conv.bias.zero_()

    def forward(self, stacks: torch.Tensor) -> torch.Tensor:
        """(N, T, K, h, w) -> (N, K, h, w)."""
        N, T, K = stacks.shape[:3]
        if T != self.num_frames or K != self.num_joints:
            raise ValueError(f"expected {self.num_frames} stacks of {self.num_joints} maps, got {T} of {K}")
        return self.conv(stacks.reshape(N, T * K, *stacks.shape[3:]))


def aggregate_heatmaps(stacks, aggregator: HeatmapAggregator) -> torch.Tensor:
    """Accepts a list of (N, K, h, w) tensors or one stacked (N, T, K, h, w) tensor."""
    if isinstance(stacks, (list, tuple)):
        shapes = {tuple(s.shape) for s in stacks}
        if len(shapes) != 1:
            raise ValueError(f"heatmap stacks disagree in shape: {sorted(shapes)}")
        stacks = torch.stack(list(stacks), dim=1)
    return aggregator(stacks)
