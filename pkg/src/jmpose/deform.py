"""Modulated deformable convolution written with plain tensor ops.

Offsets are laid out per kernel tap as ``(dx, dy)`` pairs: channel ``2q`` moves tap
``q`` along x, channel ``2q + 1`` along y. Taps are numbered row-major over the
kernel window. Each bilinear corner that lands outside the input reads zero.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def _bilinear_gather(x: torch.Tensor, py: torch.Tensor, px: torch.Tensor) -> torch.Tensor:
    """Sample x (N, C, H, W) at real positions py, px of shape (N, *S); returns (N, C, *S)."""
    N, C, H, W = x.shape
    spatial = py.shape[1:]
    y0 = torch.floor(py)
    x0 = torch.floor(px)
    ly = py - y0
    lx = px - x0
    y0 = y0.long()
    x0 = x0.long()
    flat = x.reshape(N, C, H * W)
    out = x.new_zeros((N, C) + tuple(spatial))
    for dy, wy in ((0, 1 - ly), (1, ly)):
        for dx, wx in ((0, 1 - lx), (1, lx)):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            idx = (yy.clamp(0, H - 1) * W + xx.clamp(0, W - 1)).reshape(N, 1, -1)
            vals = torch.gather(flat, 2, idx.expand(N, C, idx.shape[-1])).reshape((N, C) + tuple(spatial))
            out = out + vals * (wy * wx * valid).unsqueeze(1)
    return out


def modulated_deform_conv2d(
    x: torch.Tensor,
    offset: torch.Tensor,
    mask: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    padding: int | None = None,
    dilation: int = 1,
) -> torch.Tensor:
    """Stride-1 modulated deformable convolution.

    Args:
        x: (N, C, H, W) input.
        offset: (N, 2*k*k, Ho, Wo) per-tap (dx, dy) displacements.
        mask: (N, k*k, Ho, Wo) per-tap modulation.
        weight: (O, C, k, k) kernel.
        bias: optional (O,).
        padding: defaults to ``dilation * (k // 2)`` which keeps the spatial size.
    """
    N, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ValueError(f"kernel expects {Cw} input channels, got {C}")
    taps = kh * kw
    if offset.shape[1] != 2 * taps:
        raise ValueError(f"offset needs {2 * taps} channels, got {offset.shape[1]}")
    if mask.shape[1] != taps:
        raise ValueError(f"mask needs {taps} channels, got {mask.shape[1]}")
    if padding is None:
        padding = dilation * (kh // 2)
    Ho = H + 2 * padding - dilation * (kh - 1)
    Wo = W + 2 * padding - dilation * (kw - 1)
    if offset.shape[2:] != (Ho, Wo) or mask.shape[2:] != (Ho, Wo):
        raise ValueError(f"offset/mask spatial shape must be {(Ho, Wo)}")

    ki, kj = torch.meshgrid(torch.arange(kh), torch.arange(kw), indexing="ij")
    tap_y = (ki.reshape(-1) * dilation - padding).to(x.dtype)
    tap_x = (kj.reshape(-1) * dilation - padding).to(x.dtype)
    oy = torch.arange(Ho, dtype=x.dtype)
    ox = torch.arange(Wo, dtype=x.dtype)
    off = offset.reshape(N, taps, 2, Ho, Wo)
    px = ox.view(1, 1, 1, Wo) + tap_x.view(1, taps, 1, 1) + off[:, :, 0]
    py = oy.view(1, 1, Ho, 1) + tap_y.view(1, taps, 1, 1) + off[:, :, 1]

    cols = _bilinear_gather(x, py, px) * mask.unsqueeze(1)  # (N, C, taps, Ho, Wo)
    out = torch.einsum("nckhw,ock->nohw", cols, weight.reshape(O, C, taps))
    if bias is not None:
        out = out + bias.view(1, O, 1, 1)
    return out


class ModulatedDeformConv2d(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, dilation: int = 1, bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

    @property
    def offset_channels(self) -> int:
        return 2 * self.kernel_size**2

    @property
    def mask_channels(self) -> int:
        return self.kernel_size**2

    def forward(self, x, offset, mask):
        return modulated_deform_conv2d(x, offset, mask, self.weight, self.bias, dilation=self.dilation)

    def standard_conv(self, x):
        """The same kernel applied as an ordinary convolution (zero offsets, unit mask)."""
        pad = self.dilation * (self.kernel_size // 2)
        return F.conv2d(x, self.weight, self.bias, padding=pad, dilation=self.dilation)
