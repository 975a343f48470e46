"""Full pose network: backbone heatmaps, joint learner, mutual learning and head.

Ablation variants change only the wiring:

``full``      joint learner -> L interaction layers -> head, orthogonality on every layer
``no_cjl``    the aggregated heatmap (embedded) replaces the joint feature
``no_jmml``   the joint feature goes straight to the head; no orthogonality terms
``no_jmib``   no interaction layers, orthogonality applied once to the joint learner output
``no_io``     same network as ``full``; the trainer sets the orthogonality weight to 0
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from jmpose.backbone import HeatmapAggregator, ToyEncoder, extract_frame_heatmaps
from jmpose.info_orthogonality import OrthogonalityEstimators
from jmpose.joint_learner import ContextAwareJointLearner
from jmpose.mutual_learning import DetectionHead, JointMotionMutualLearning, LayerState

VARIANTS = ("full", "no_cjl", "no_jmml", "no_jmib", "no_io")

# named but deliberately not built: the motion stream from frame-feature differences
# is described too loosely to reconstruct
UNIMPLEMENTED_VARIANTS = {
    "feature_diff": "motion features from visual feature differences are not implemented; "
    "the construction is underspecified",
}


def check_variant(variant: str) -> None:
    if variant in UNIMPLEMENTED_VARIANTS:
        raise NotImplementedError(f"variant {variant!r}: {UNIMPLEMENTED_VARIANTS[variant]}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")


@dataclass
class ModelConfig:
    num_joints: int = 15
    delta: int = 2
    channels: int = 32
    layers: int = 4
    kernel_size: int = 3
    motion_channels: int = 4
    variant: str = "full"
    heatmap_residual: bool = True
    estimator_hidden: int = 64
    max_tokens: int = 4096
    encoder_widths: tuple = (16, 32, 64)

    def __post_init__(self):
        check_variant(self.variant)
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")


@dataclass
class ModelOutput:
    heatmaps: torch.Tensor
    h_hat: torch.Tensor
    frame_heatmaps: torch.Tensor
    io_pairs: list = field(default_factory=list)  # (motion, joint) feature pairs for the IO loss


class JMPose(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        K, C = cfg.num_joints, cfg.channels
        self.encoder = ToyEncoder(K, widths=tuple(cfg.encoder_widths))
        self.aggregator = HeatmapAggregator(K, 2 * cfg.delta + 1)
        self.motion_embed = nn.Sequential(nn.Conv2d(cfg.motion_channels, C, 3, padding=1), nn.ReLU())
        if cfg.variant == "no_cjl":
            self.heatmap_embed = nn.Sequential(nn.Conv2d(K, C, 3, padding=1), nn.ReLU())
        else:
            self.cjl = ContextAwareJointLearner(K, cfg.motion_channels, C, C, cfg.kernel_size)
        if cfg.variant in ("full", "no_cjl", "no_io"):
            self.jmml = JointMotionMutualLearning(C, cfg.layers, max_tokens=cfg.max_tokens)
        self.head = DetectionHead(C, K)
        self.estimators = nn.ModuleList(
            OrthogonalityEstimators(C, C, K, cfg.estimator_hidden) for _ in range(self.num_io_terms)
        )

    @property
    def num_io_terms(self) -> int:
        v = self.config.variant
        if v == "no_jmml":
            return 0
        if v == "no_jmib":
            return 1
        return self.config.layers

    def model_parameters(self):
        """Everything except the MI estimators."""
        return [p for n, p in self.named_parameters() if not n.startswith("estimators.")]

    def forward(self, frames: torch.Tensor, motion: torch.Tensor) -> ModelOutput:
        """frames (N, T, 3, H, W), motion (N, 4, H/4, W/4)."""
        v = self.config.variant
        frame_hm = extract_frame_heatmaps(frames, self.encoder)
        h_hat = self.aggregator(frame_hm)
        m0 = self.motion_embed(motion)
        if v == "no_cjl":
            j0 = self.heatmap_embed(h_hat)
        else:
            j0 = self.cjl(h_hat, motion)
        io_pairs = []
        if v == "no_jmml":
            final = LayerState(j0, torch.zeros_like(j0))
        elif v == "no_jmib":
            final = LayerState(j0, m0)
            io_pairs = [(m0, j0)]
        else:
            final, states = self.jmml(LayerState(j0, m0))
            io_pairs = [(s.motion, s.joint) for s in states]
        heatmaps = self.head(final)
        if self.config.heatmap_residual:
            heatmaps = heatmaps + h_hat
        return ModelOutput(heatmaps, h_hat, frame_hm, io_pairs)
