"""Context-aware joint learner: heatmap-guided deformable sampling of the motion volume."""

from __future__ import annotations

import torch
import torch.nn as nn

from jmpose.deform import ModulatedDeformConv2d


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(x + self.conv2(self.act(self.conv1(x))))


class ContextAwareJointLearner(nn.Module):
    def __init__(
        self,
        num_joints: int = 15,
        motion_channels: int = 4,
        fused_channels: int = 32,
        joint_channels: int = 32,
        kernel_size: int = 3,
    ):
        super().__init__()
        self.kernel_size = kernel_size
        self.fuse_conv = nn.Conv2d(num_joints + motion_channels, fused_channels, 3, padding=1)
        self.fuse_act = nn.ReLU()
        taps = kernel_size * kernel_size
        # offset and modulation branches are kept fully separate
        self.offset_branch = nn.Sequential(
            ResidualBlock(fused_channels), nn.Conv2d(fused_channels, 2 * taps, 3, padding=1)
        )
        self.weight_branch = nn.Sequential(
            ResidualBlock(fused_channels), nn.Conv2d(fused_channels, taps, 3, padding=1)
        )
        self.deform = ModulatedDeformConv2d(motion_channels, joint_channels, kernel_size)
        for head in (self.offset_branch[-1], self.weight_branch[-1]):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def fuse(self, h_hat: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        if h_hat.shape[-2:] != motion.shape[-2:]:
            raise ValueError(f"heatmap {tuple(h_hat.shape)} and motion {tuple(motion.shape)} differ spatially")
        return self.fuse_act(self.fuse_conv(torch.cat([h_hat, motion], dim=1)))

    def predict_offsets_weights(self, r: torch.Tensor):
        """Raw per-tap offsets (2k^2 channels) and sigmoid modulation (k^2 channels)."""
        return self.offset_branch(r), torch.sigmoid(self.weight_branch(r))

    def retrieve(self, motion, offsets, weights):
        return self.deform(motion, offsets, weights)

    def forward(self, h_hat: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        r = self.fuse(h_hat, motion)
        offsets, weights = self.predict_offsets_weights(r)
        return self.retrieve(motion, offsets, weights)
