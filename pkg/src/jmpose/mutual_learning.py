"""Progressive joint-motion mutual learning: cross-attention exchange plus sigmoid gating.

Feature maps are flattened into tokens row-major (``x.flatten(2)``), so token
``n`` is pixel ``(n // W, n % W)``. No positional encoding is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class LayerState:
    joint: torch.Tensor
    motion: torch.Tensor
    layer_index: int = 0

    def __post_init__(self):
        if self.joint.shape != self.motion.shape:
            raise ValueError(
                f"joint {tuple(self.joint.shape)} and motion {tuple(self.motion.shape)} must match"
            )


def cross_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v over (N, tokens, d) sequences, normalised along keys."""
    d = q.shape[-1]
    weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def _tokens(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(2).transpose(1, 2)


def _untokens(t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return t.transpose(1, 2).reshape(like.shape[0], t.shape[-1], *like.shape[2:])


class JointMotionInteractionBlock(nn.Module):
    def __init__(self, channels: int = 32, attn_dim: int | None = None, max_tokens: int = 4096):
        super().__init__()
        d = attn_dim or channels
        self.channels = channels
        self.attn_dim = d
        self.max_tokens = max_tokens
        self.pre_joint = nn.Sequential(nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU())
        self.pre_motion = nn.Sequential(nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU())
        self.q_joint = nn.Conv2d(channels, d, 1)
        self.k_joint = nn.Conv2d(channels, d, 1)
        self.v_joint = nn.Conv2d(channels, channels, 1)
        self.q_motion = nn.Conv2d(channels, d, 1)
        self.k_motion = nn.Conv2d(channels, d, 1)
        self.v_motion = nn.Conv2d(channels, channels, 1)
        self.gate = nn.Conv2d(2 * channels, 2 * channels, 1)

    def cross_attend(self, joint, motion, return_weights: bool = False):
        """Returns ``(j_att, m_att, j_pre, m_pre)`` (plus both attention maps if asked)."""
        n_tokens = joint.shape[-2] * joint.shape[-1]
        if n_tokens > self.max_tokens:
            raise ValueError(f"{n_tokens} tokens exceed the configured maximum of {self.max_tokens}")
        j_pre = self.pre_joint(joint)
        m_pre = self.pre_motion(motion)
        j_out, a_j = cross_attention(
            _tokens(self.q_joint(j_pre)), _tokens(self.k_motion(m_pre)), _tokens(self.v_motion(m_pre)), True
        )
        m_out, a_m = cross_attention(
            _tokens(self.q_motion(m_pre)), _tokens(self.k_joint(j_pre)), _tokens(self.v_joint(j_pre)), True
        )
        j_att = _untokens(j_out, j_pre) + j_pre
        m_att = _untokens(m_out, m_pre) + m_pre
        if return_weights:
            return j_att, m_att, j_pre, m_pre, a_j, a_m
        return j_att, m_att, j_pre, m_pre

    def gate_masks(self, j_att, m_att):
        masks = torch.sigmoid(self.gate(torch.cat([j_att, m_att], dim=1)))
        return torch.chunk(masks, 2, dim=1)

    def apply_gate(self, j_att, m_att, j_pre, m_pre):
        """Masks come from the attended features and rescale the pre-attention ones."""
        a_j, a_m = self.gate_masks(j_att, m_att)
        return a_j * j_pre, a_m * m_pre

    def forward(self, state: LayerState) -> LayerState:
        j_att, m_att, j_pre, m_pre = self.cross_attend(state.joint, state.motion)
        joint, motion = self.apply_gate(j_att, m_att, j_pre, m_pre)
        return LayerState(joint, motion, state.layer_index + 1)


class JointMotionMutualLearning(nn.Module):
    def __init__(self, channels: int = 32, num_layers: int = 4, attn_dim: int | None = None, max_tokens: int = 4096):
        super().__init__()
        if num_layers < 1:
            raise ValueError("need at least one interaction layer")
        self.layers = nn.ModuleList(
            JointMotionInteractionBlock(channels, attn_dim, max_tokens) for _ in range(num_layers)
        )

    def forward(self, initial: LayerState):
        """Returns the final state and every per-layer state (layers 1..L)."""
        states = []
        state = initial
        for layer in self.layers:
            state = layer(state)
            states.append(state)
        return state, states


class DetectionHead(nn.Module):
    """Concatenate the two streams, fuse with a conv block, then 3x3 convs to K maps."""

    def __init__(self, channels: int = 32, num_joints: int = 15):
        super().__init__()
        self.aggregate = nn.Sequential(nn.Conv2d(2 * channels, channels, 3, padding=1), nn.ReLU())
        self.head = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, num_joints, 3, padding=1),
        )

    def forward(self, final: LayerState) -> torch.Tensor:
        return self.head(self.aggregate(torch.cat([final.joint, final.motion], dim=1)))
