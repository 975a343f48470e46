"""Training/evaluation datasets held in memory as stacked arrays."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from jmpose.core import io
from jmpose.core.augment import AugmentParams, augment, augment_flow
from jmpose.core.heatmaps import render_gaussian_heatmaps
from jmpose.core.synthetic import random_scene_spec, render_scene, scene_to_clip
from jmpose.core.types import Box, FrameClip, PersonPose
from jmpose.flow import FileFlowProvider, flows_to_volume, make_provider, motion_pairs

STRIDE = 4


@dataclass
class PoseDataset:
    """N clips of T frames with keyframe-centred motion flows.

    ``frames`` is uint8 (N, T, 3, H, W); ``poses`` float32 (N, T, K, 3) rows of
    ``[x, y, visible]``; ``flows`` float32 (N, 2, 2, H, W) holding the incoming and
    outgoing keyframe flows at full resolution; ``boxes`` (N, 4) as ``cx, cy, w, h``.
    """

    frames: np.ndarray
    poses: np.ndarray
    flows: np.ndarray
    boxes: np.ndarray
    occluded: np.ndarray
    defocused: np.ndarray
    delta: int

    def __post_init__(self):
        n = len(self.frames)
        for name in ("poses", "flows", "boxes", "occluded", "defocused"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {n}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.frames.shape[-2:])

    @property
    def num_joints(self) -> int:
        return self.poses.shape[2]

    @property
    def challenging(self) -> np.ndarray:
        return self.occluded | self.defocused

    def subset(self, index) -> "PoseDataset":
        index = np.asarray(index)
        return PoseDataset(
            self.frames[index],
            self.poses[index],
            self.flows[index],
            self.boxes[index],
            self.occluded[index],
            self.defocused[index],
            self.delta,
        )

    def keyframe_poses(self) -> np.ndarray:
        return self.poses[:, self.delta]

    def clip(self, i: int) -> FrameClip:
        meta = {"occluded": bool(self.occluded[i]), "defocused": bool(self.defocused[i])}
        return FrameClip(self.frames[i].astype(np.float32) / 255.0, self.delta, Box(*self.boxes[i]), meta)

    @classmethod
    def from_clips(cls, items) -> "PoseDataset":
        """``items``: iterable of ``(clip, poses, (prev_flow, next_flow))``."""
        frames, poses, flows, boxes, occ, dfc = [], [], [], [], [], []
        delta = None
        for clip, clip_poses, (prev, nxt) in items:
            if delta is None:
                delta = clip.delta
            elif clip.delta != delta:
                raise ValueError("all clips must share the same delta")
            frames.append(np.round(np.clip(clip.frames, 0, 1) * 255).astype(np.uint8))
            poses.append(np.stack([p.to_array() for p in clip_poses]).astype(np.float32))
            flows.append(np.stack([prev.stack(), nxt.stack()]).astype(np.float32))
            boxes.append(clip.person_box.to_list())
            occ.append(bool(clip.meta.get("occluded", False)))
            dfc.append(bool(clip.meta.get("defocused", False)))
        if delta is None:
            raise ValueError("dataset is empty")
        return cls(
            np.stack(frames),
            np.stack(poses),
            np.stack(flows),
            np.asarray(boxes, dtype=np.float64),
            np.asarray(occ),
            np.asarray(dfc),
            delta,
        )


def select_challenging_subset(dataset: PoseDataset) -> PoseDataset:
    """Clips flagged occluded or defocused."""
    return dataset.subset(np.flatnonzero(dataset.challenging))


def select_clean_subset(dataset: PoseDataset) -> PoseDataset:
    return dataset.subset(np.flatnonzero(~dataset.challenging))


def synthetic_items(n, seed, image_shape=(96, 72), delta=2, span="delta", **scene_kw):
    """Yield ``(clip, poses, keyframe flows)`` for ``n`` random scenes; clip ``i`` depends only on ``(seed, i)``."""
    for i in range(n):
        spec = random_scene_spec(np.random.default_rng([seed, i]), image_shape, delta, **scene_kw)
        scene = render_scene(spec)
        clip, poses, _ = scene_to_clip(scene)
        (a, k), (_, b) = motion_pairs(clip, span)
        yield clip, poses, (scene.pair_flow(a, k), scene.pair_flow(k, b))


def build_synthetic_dataset(n, seed, image_shape=(96, 72), delta=2, span="delta", **scene_kw) -> PoseDataset:
    return PoseDataset.from_clips(synthetic_items(n, seed, image_shape, delta, span, **scene_kw))


def write_synthetic_dataset(root, n, seed, image_shape=(96, 72), delta=2, **scene_kw) -> list[Path]:
    """Render ``n`` scenes to ``root/clip_XXXX`` with consecutive and keyframe flows."""
    root = Path(root)
    paths = []
    for i in range(n):
        spec = random_scene_spec(np.random.default_rng([seed, i]), image_shape, delta, **scene_kw)
        scene = render_scene(spec)
        clip, poses, flows = scene_to_clip(scene)
        k = clip.keyframe_index
        motion = (scene.pair_flow(k - delta, k), scene.pair_flow(k, k + delta))
        paths.append(io.save_clip(root / f"clip_{i:04d}", clip, poses, flows, motion))
    return paths


def _disk_flows(clip, flows, motion, provider, span):
    (a, k), (_, b) = motion_pairs(clip, span)
    if provider == "oracle":
        if span == "delta" and motion is not None:
            return motion
        if b - a == 2 and flows:
            return flows[a], flows[k]
        raise ValueError("stored flows do not cover the requested motion span")
    if provider == "file":
        p = FileFlowProvider(clip.frames, flows)
    else:
        p = make_provider(provider)
    return p.estimate_flow(clip.frames[a], clip.frames[k]), p.estimate_flow(clip.frames[k], clip.frames[b])


def load_dataset(root, provider: str = "oracle", span: str = "delta") -> PoseDataset:
    """Load every clip under ``root``; ``provider`` is ``oracle`` (stored exact flows),
    ``file`` (composed consecutive flows) or ``blockmatch``."""
    paths = io.list_clips(root)
    if not paths:
        raise ValueError(f"no clips found under {root}")

    def items():
        for p in paths:
            clip, poses, flows, motion = io.load_clip(p)
            yield clip, poses, _disk_flows(clip, flows, motion, provider, span)

    return PoseDataset.from_clips(items())


# --- batching ---


def target_heatmaps(poses: np.ndarray, image_shape, sigma: float, stride: int = STRIDE) -> np.ndarray:
    """(N, K, 3) keypoint rows -> (N, K, H/stride, W/stride) Gaussian targets."""
    H, W = image_shape
    shape = (poses.shape[1], H // stride, W // stride)
    return np.stack(
        [render_gaussian_heatmaps(PersonPose.from_array(p), shape, sigma, stride).maps for p in poses]
    ).astype(np.float32)


@dataclass
class Batch:
    frames: torch.Tensor  # (B, T, 3, H, W) float32 in [0, 1]
    motion: torch.Tensor  # (B, 4, H/4, W/4)
    target: torch.Tensor  # (B, K, H/4, W/4) keyframe heatmaps
    frame_targets: torch.Tensor | None  # (B, T, K, H/4, W/4), only when requested
    poses: np.ndarray  # keyframe rows (B, K, 3)
    boxes: np.ndarray
    index: np.ndarray


def make_batch(dataset: PoseDataset, index, sigma: float, augment_params=None, frame_targets: bool = False) -> Batch:
    """Assemble a batch; ``augment_params`` is an optional list of per-clip :class:`AugmentParams`."""
    index = np.asarray(index)
    shape = dataset.image_shape
    frames, motion, poses_all, boxes = [], [], [], []
    for n, i in enumerate(index):
        clip_frames = dataset.frames[i].astype(np.float32) / 255.0
        clip_poses = dataset.poses[i]
        prev, nxt = dataset.flows[i]
        box = dataset.boxes[i]
        params = augment_params[n] if augment_params is not None else None
        if params is not None and params != AugmentParams():
            clip = FrameClip(clip_frames, dataset.delta, Box(*box))
            clip, new_poses = augment(clip, [PersonPose.from_array(p) for p in clip_poses], params)
            clip_frames = clip.frames.astype(np.float32)
            clip_poses = np.stack([p.to_array() for p in new_poses]).astype(np.float32)
            prev, nxt = augment_flow(prev, params), augment_flow(nxt, params)
            box = np.asarray(clip.person_box.to_list())
        frames.append(clip_frames)
        motion.append(flows_to_volume(prev, nxt, STRIDE))
        poses_all.append(clip_poses)
        boxes.append(box)
    poses_all = np.stack(poses_all)
    key = poses_all[:, dataset.delta]
    ft = None
    if frame_targets:
        B, T = poses_all.shape[:2]
        ft = target_heatmaps(poses_all.reshape(B * T, *poses_all.shape[2:]), shape, sigma)
        ft = torch.from_numpy(ft.reshape(B, T, *ft.shape[1:]))
    return Batch(
        frames=torch.from_numpy(np.stack(frames)),
        motion=torch.from_numpy(np.stack(motion)),
        target=torch.from_numpy(target_heatmaps(key, shape, sigma)),
        frame_targets=ft,
        poses=key,
        boxes=np.stack(boxes),
        index=index,
    )
