"""Ground-truth heatmap encoding, argmax decoding and person-box enlargement."""

from __future__ import annotations

import numpy as np

from jmpose.core.types import Box, HeatmapStack, Keypoint, PersonPose

DEFAULT_STRIDE = 4
DEFAULT_SIGMA = 2.0


def crop_and_enlarge(box: Box, factor: float = 0.25, image_shape=None) -> Box:
    """Scale ``box`` about its center by ``1 + factor``.

    When ``image_shape`` (H, W) is given the result is clipped to ``[0, W] x [0, H]``,
    which moves the center only if an edge had to be clipped.
    """
    if box.w <= 0 or box.h <= 0:
        raise ValueError(f"degenerate box {box}")
    if factor < 0:
        raise ValueError("enlargement factor must be >= 0")
    w = box.w * (1.0 + factor)
    h = box.h * (1.0 + factor)
    out = Box(box.cx, box.cy, w, h)
    if image_shape is None:
        return out
    H, W = image_shape
    x0, y0, x1, y1 = out.corners
    return Box.from_corners(max(x0, 0.0), max(y0, 0.0), min(x1, float(W)), min(y1, float(H)))


def render_gaussian_heatmaps(
    pose: PersonPose, shape, sigma: float = DEFAULT_SIGMA, stride: int = DEFAULT_STRIDE
) -> HeatmapStack:
    """Unnormalised Gaussian per visible joint, peak 1 at the joint's heatmap location.

    Keypoints that fall outside the heatmap after dividing by ``stride`` produce an
    all-zero channel, like invisible ones.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    K, H, W = shape
    if pose.num_joints != K:
        raise ValueError(f"pose has {pose.num_joints} joints, heatmap expects {K}")
    maps = np.zeros((K, H, W), dtype=np.float64)
    us = np.arange(W, dtype=np.float64)[None, :]
    vs = np.arange(H, dtype=np.float64)[:, None]
    for k, kp in enumerate(pose.keypoints):
        if not kp.visible:
            continue
        x, y = kp.x / stride, kp.y / stride
        if not (0.0 <= x < W and 0.0 <= y < H):
            continue
        maps[k] = np.exp(-((us - x) ** 2 + (vs - y) ** 2) / (2.0 * sigma**2))
    return HeatmapStack(maps, stride)


def _quarter_offset(row: np.ndarray, i: int) -> float:
    left = row[i - 1] if i > 0 else -np.inf
    right = row[i + 1] if i < len(row) - 1 else -np.inf
    if right > left:
        return 0.25
    if left > right:
        return -0.25
    return 0.0


def decode_heatmaps(hm: HeatmapStack, visibility_threshold: float = 0.1) -> PersonPose:
    """Argmax per channel, nudged a quarter cell toward the larger axis neighbour."""
    maps = np.asarray(hm.maps, dtype=np.float64)
    keypoints = []
    for channel in maps:
        v, u = np.unravel_index(int(np.argmax(channel)), channel.shape)
        peak = channel[v, u]
        x = u + _quarter_offset(channel[v, :], u)
        y = v + _quarter_offset(channel[:, u], v)
        visible = bool(peak > visibility_threshold and peak > channel.min())
        keypoints.append(Keypoint(float(x * hm.stride), float(y * hm.stride), visible))
    return PersonPose(tuple(keypoints))


def decode_batch(maps: np.ndarray, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Vectorised decoding of (N, K, H, W) heatmaps to (N, K, 2) image coordinates."""
    maps = np.asarray(maps, dtype=np.float64)
    N, K, H, W = maps.shape
    flat = maps.reshape(N, K, -1)
    idx = flat.argmax(-1)
    v, u = np.divmod(idx, W)
    n_i, k_i = np.meshgrid(np.arange(N), np.arange(K), indexing="ij")
    pad = np.pad(maps, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    right = pad[n_i, k_i, v + 1, u + 2]
    left = pad[n_i, k_i, v + 1, u]
    down = pad[n_i, k_i, v + 2, u + 1]
    up = pad[n_i, k_i, v, u + 1]
    x = u + 0.25 * np.sign(right - left)
    y = v + 0.25 * np.sign(down - up)
    # sign(-inf - -inf) is nan; both neighbours missing means no shift
    x = np.where(np.isnan(x), u, x)
    y = np.where(np.isnan(y), v, y)
    return np.stack([x, y], axis=-1) * stride
