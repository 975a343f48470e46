from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import affine_transform

from jmpose.core.skeleton import FLIP_PERMUTATION
from jmpose.core.types import Box, FrameClip, Keypoint, PersonPose


@dataclass(frozen=True)
class AugmentParams:
    rotation: float = 0.0  # degrees, positive turns +x toward +y
    scale: float = 1.0
    flip: bool = False
    truncation: tuple[float, float, float, float] | None = None  # x0, y0, x1, y1 kept


@dataclass(frozen=True)
class AugmentRanges:
    rotation: float = 45.0
    scale: tuple[float, float] = (0.65, 1.35)
    flip_prob: float = 0.5
    truncation_prob: float = 0.0
    truncation_min_keep: float = 0.6

    def sample(self, rng: np.random.Generator, image_shape) -> AugmentParams:
        H, W = image_shape
        trunc = None
        if rng.uniform() < self.truncation_prob:
            keep = rng.uniform(self.truncation_min_keep, 1.0)
            if rng.uniform() < 0.5:
                y1 = keep * H
                trunc = (0.0, 0.0, float(W), float(y1))
            else:
                y0 = (1 - keep) * H
                trunc = (0.0, float(y0), float(W), float(H))
        return AugmentParams(
            rotation=float(rng.uniform(-self.rotation, self.rotation)),
            scale=float(rng.uniform(*self.scale)),
            flip=bool(rng.uniform() < self.flip_prob),
            truncation=trunc,
        )


def affine_matrix(params: AugmentParams, image_shape):
    """Return ``(A, t)`` with ``p' = A @ p + t`` in (x, y) pixel coordinates."""
    H, W = image_shape
    c = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    th = np.deg2rad(params.rotation)
    A = params.scale * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    t = c - A @ c
    if params.flip:
        F = np.array([[-1.0, 0.0], [0.0, 1.0]])
        A = F @ A
        t = F @ t + np.array([W - 1.0, 0.0])
    return A, t


def transform_points(xy, params: AugmentParams, image_shape) -> np.ndarray:
    A, t = affine_matrix(params, image_shape)
    return np.asarray(xy, dtype=np.float64) @ A.T + t


def _warp(images: np.ndarray, params: AugmentParams, order: int = 1) -> np.ndarray:
    """Resample (..., H, W) images so output pixel p' reads input at the inverse transform."""
    H, W = images.shape[-2:]
    A, t = affine_matrix(params, (H, W))
    Ainv = np.linalg.inv(A)
    # scipy works in (row, col) = (y, x)
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    M = P @ Ainv @ P
    offset = -(M @ (P @ t))
    flat = images.reshape(-1, H, W)
    out = np.stack(
        [affine_transform(im, M, offset=offset, order=order, mode="constant", cval=0.0) for im in flat]
    )
    return out.reshape(images.shape)


def _keep_mask(params: AugmentParams, image_shape) -> np.ndarray | None:
    if params.truncation is None:
        return None
    H, W = image_shape
    x0, y0, x1, y1 = params.truncation
    xs = np.arange(W)[None, :]
    ys = np.arange(H)[:, None]
    return (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)


def augment_pose(pose: PersonPose, params: AugmentParams, image_shape) -> PersonPose:
    H, W = image_shape
    xy = transform_points(pose.xy, params, image_shape)
    x0, y0, x1, y1 = params.truncation or (0.0, 0.0, float(W), float(H))
    new = [None] * pose.num_joints
    for k, kp in enumerate(pose.keypoints):
        x, y = xy[k]
        inside = 0 <= x < W and 0 <= y < H and x0 <= x < x1 and y0 <= y < y1
        dst = FLIP_PERMUTATION[k] if params.flip else k
        new[dst] = Keypoint(float(x), float(y), bool(kp.visible and inside))
    return PersonPose(tuple(new), pose.joint_names)


def augment(clip: FrameClip, poses, params: AugmentParams):
    """Apply one geometric transform to every frame of ``clip`` and to every pose."""
    shape = clip.image_shape
    frames = _warp(np.asarray(clip.frames, dtype=np.float64), params).astype(clip.frames.dtype)
    keep = _keep_mask(params, shape)
    if keep is not None:
        frames = frames * keep
    x0, y0, x1, y1 = clip.person_box.corners
    corners = transform_points([[x0, y0], [x1, y0], [x0, y1], [x1, y1]], params, shape)
    H, W = shape
    lo = np.clip(corners.min(0), 0, [W, H])
    hi = np.clip(corners.max(0), 0, [W, H])
    box = Box.from_corners(lo[0], lo[1], hi[0], hi[1])
    new_clip = FrameClip(frames, clip.delta, box, dict(clip.meta))
    return new_clip, [augment_pose(p, params, shape) for p in poses]


def augment_flow(flow: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Carry a (2, H, W) displacement field through the same transform as the frames.

    Positions move with the warp and the vectors themselves rotate, scale and
    mirror with the linear part.
    """
    H, W = flow.shape[-2:]
    A, _ = affine_matrix(params, (H, W))
    moved = _warp(np.asarray(flow, dtype=np.float64), params)
    out = np.einsum("ij,jhw->ihw", A, moved)
    keep = _keep_mask(params, (H, W))
    if keep is not None:
        out = out * keep
    return out
