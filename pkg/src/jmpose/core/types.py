from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from jmpose.core.skeleton import JOINT_NAMES


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    visible: bool


@dataclass(frozen=True)
class PersonPose:
    """Ordered keypoints of one person; coordinates are image pixels."""

    keypoints: tuple[Keypoint, ...]
    joint_names: tuple[str, ...] = JOINT_NAMES

    def __post_init__(self):
        if len(self.keypoints) != len(self.joint_names):
            raise ValueError(
                f"expected {len(self.joint_names)} keypoints, got {len(self.keypoints)}"
            )

    @property
    def num_joints(self) -> int:
        return len(self.keypoints)

    @classmethod
    def from_array(cls, arr, joint_names: Sequence[str] = JOINT_NAMES) -> "PersonPose":
        """Build from a (K, 3) array of ``[x, y, visible]`` rows."""
        arr = np.asarray(arr, dtype=np.float64)
        kps = tuple(Keypoint(float(x), float(y), bool(v > 0)) for x, y, v in arr)
        return cls(kps, tuple(joint_names))

    def to_array(self) -> np.ndarray:
        return np.array([[k.x, k.y, float(k.visible)] for k in self.keypoints])

    @property
    def xy(self) -> np.ndarray:
        return self.to_array()[:, :2]

    @property
    def visible(self) -> np.ndarray:
        return np.array([k.visible for k in self.keypoints], dtype=bool)


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle stored by center and size (pixels)."""

    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def from_corners(cls, x0, y0, x1, y1) -> "Box":
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.w, self.h))

    def to_list(self) -> list[float]:
        return [self.cx, self.cy, self.w, self.h]

    @classmethod
    def from_list(cls, values) -> "Box":
        return cls(*map(float, values))


@dataclass
class FrameClip:
    """``2*delta + 1`` frames centred on the keyframe, each (C, H, W) in [0, 1]."""

    frames: np.ndarray
    delta: int
    person_box: Box
    meta: dict = field(default_factory=lambda: {"occluded": False, "defocused": False})

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4:
            raise ValueError("frames must be a (T, C, H, W) array")
        if self.frames.shape[0] != 2 * self.delta + 1:
            raise ValueError(
                f"clip with delta={self.delta} needs {2 * self.delta + 1} frames, "
                f"got {self.frames.shape[0]}"
            )

    @property
    def keyframe_index(self) -> int:
        return self.delta

    @property
    def keyframe(self) -> np.ndarray:
        return self.frames[self.delta]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[3]

    @property
    def is_challenging(self) -> bool:
        return bool(self.meta.get("occluded", False) or self.meta.get("defocused", False))


@dataclass
class HeatmapStack:
    maps: np.ndarray  # (K, H_hm, W_hm)
    stride: int = 4

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.maps.shape
