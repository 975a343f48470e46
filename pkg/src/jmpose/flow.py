"""Optical-flow providers and the 4-channel motion volume fed to the model.

A provider maps a frame pair to a :class:`FlowField`. Three are bundled:

* :class:`OracleFlowProvider` reads the exact displacement the synthetic generator
  rendered.
* :class:`BlockMatchFlowProvider` is a classical two-level SSD block matcher for
  frames without ground truth.
* :class:`FileFlowProvider` composes consecutive flows stored on disk.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np
from scipy.ndimage import map_coordinates, uniform_filter

from jmpose.core.synthetic import FlowField, RenderedScene
from jmpose.core.types import FrameClip

MOTION_CHANNELS = ("u_prev", "v_prev", "u_next", "v_next")


class FlowProvider(Protocol):
    def estimate_flow(self, frame_a: np.ndarray, frame_b: np.ndarray) -> FlowField: ...


def _check_pair(frame_a, frame_b):
    if np.shape(frame_a) != np.shape(frame_b):
        raise ValueError(f"frame shapes differ: {np.shape(frame_a)} vs {np.shape(frame_b)}")


def _locate(frames, frame) -> int:
    for i, f in enumerate(frames):
        if f.shape == frame.shape and np.array_equal(f, frame):
            return i
    raise KeyError("frame is not part of the clip this provider was built for")


class OracleFlowProvider:
    """Exact flow of a rendered synthetic scene; frames are matched by content."""

    def __init__(self, scene: RenderedScene):
        self.scene = scene

    def estimate_flow(self, frame_a, frame_b) -> FlowField:
        _check_pair(frame_a, frame_b)
        if np.array_equal(frame_a, frame_b):
            return FlowField.zeros(self.scene.spec.image_shape)
        a = _locate(self.scene.frames, np.asarray(frame_a))
        b = _locate(self.scene.frames, np.asarray(frame_b))
        return self.scene.pair_flow(a, b)


def compose_flows(first: FlowField, second: FlowField) -> FlowField:
    """Flow a->c from a->b and b->c, sampling the second field bilinearly."""
    H, W = first.shape
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    coords = np.stack([ys + first.v, xs + first.u])
    u2 = map_coordinates(second.u, coords, order=1, mode="constant", cval=0.0)
    v2 = map_coordinates(second.v, coords, order=1, mode="constant", cval=0.0)
    return FlowField(first.u + u2, first.v + v2)


class FileFlowProvider:
    """Flows loaded from disk for consecutive frame pairs of one clip."""

    def __init__(self, frames: np.ndarray, flows: list[FlowField]):
        if len(flows) != len(frames) - 1:
            raise ValueError("need one flow per consecutive frame pair")
        self.frames = np.asarray(frames)
        self.flows = flows

    def estimate_flow(self, frame_a, frame_b) -> FlowField:
        _check_pair(frame_a, frame_b)
        if np.array_equal(frame_a, frame_b):
            return FlowField.zeros(self.frames.shape[-2:])
        a = _locate(self.frames, np.asarray(frame_a))
        b = _locate(self.frames, np.asarray(frame_b))
        if b < a:
            raise ValueError("stored flows only run forward in time")
        out = self.flows[a]
        for i in range(a + 1, b):
            out = compose_flows(out, self.flows[i])
        return out


class BlockMatchFlowProvider:
    """Coarse-to-fine SSD block matching on grey-level frames (integer precision)."""

    def __init__(self, window: int = 7, coarse_radius: int = 4, fine_radius: int = 2, levels: int = 2):
        self.window = window
        self.coarse_radius = coarse_radius
        self.fine_radius = fine_radius
        self.levels = levels

    @staticmethod
    def _grey(frame):
        frame = np.asarray(frame, dtype=np.float64)
        return frame.mean(axis=0) if frame.ndim == 3 else frame

    @staticmethod
    def _down(img):
        H, W = img.shape
        img = img[: H - H % 2, : W - W % 2]
        return img.reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))

    def _match(self, a, b, init_u, init_v, radius):
        H, W = a.shape
        ys, xs = np.mgrid[0:H, 0:W]
        best = np.full((H, W), np.inf)
        bu = init_u.copy()
        bv = init_v.copy()
        for dv in range(-radius, radius + 1):
            for du in range(-radius, radius + 1):
                tu = init_u + du
                tv = init_v + dv
                yy = np.clip(ys + tv, 0, H - 1)
                xx = np.clip(xs + tu, 0, W - 1)
                cost = uniform_filter((a - b[yy, xx]) ** 2, size=self.window, mode="nearest")
                # tie-break toward small motion on textureless regions
                cost = cost + 1e-9 * (tu**2 + tv**2)
                better = cost < best
                best[better] = cost[better]
                bu[better] = tu[better]
                bv[better] = tv[better]
        return bu, bv

    def estimate_flow(self, frame_a, frame_b) -> FlowField:
        _check_pair(frame_a, frame_b)
        pyr_a = [self._grey(frame_a)]
        pyr_b = [self._grey(frame_b)]
        for _ in range(self.levels - 1):
            pyr_a.append(self._down(pyr_a[-1]))
            pyr_b.append(self._down(pyr_b[-1]))
        u = np.zeros(pyr_a[-1].shape, dtype=np.int64)
        v = np.zeros_like(u)
        u, v = self._match(pyr_a[-1], pyr_b[-1], u, v, self.coarse_radius)
        for level in range(self.levels - 2, -1, -1):
            H, W = pyr_a[level].shape
            up_u = np.zeros((H, W), dtype=np.int64)
            up_v = np.zeros((H, W), dtype=np.int64)
            rep_u = np.repeat(np.repeat(u * 2, 2, 0), 2, 1)
            rep_v = np.repeat(np.repeat(v * 2, 2, 0), 2, 1)
            up_u[: rep_u.shape[0], : rep_u.shape[1]] = rep_u
            up_v[: rep_v.shape[0], : rep_v.shape[1]] = rep_v
            u, v = self._match(pyr_a[level], pyr_b[level], up_u, up_v, self.fine_radius)
        return FlowField(u.astype(np.float64), v.astype(np.float64))


def downsample_flow(flow: FlowField, stride: int) -> np.ndarray:
    """Area-average to 1/stride resolution and express displacement in output cells."""
    H, W = flow.shape
    if H % stride or W % stride:
        raise ValueError(f"flow shape {flow.shape} not divisible by stride {stride}")
    st = flow.stack().reshape(2, H // stride, stride, W // stride, stride).mean(axis=(2, 4))
    return st / stride


def motion_pairs(clip: FrameClip, span: str = "delta") -> tuple[tuple[int, int], tuple[int, int]]:
    """Frame index pairs feeding the volume: keyframe -/+ delta, or -/+ 1 for ``adjacent``."""
    k = clip.keyframe_index
    if span == "delta":
        s = clip.delta
    elif span == "adjacent":
        s = 1
    else:
        raise ValueError(f"unknown motion span {span!r}")
    return (k - s, k), (k, k + s)


def build_motion_volume(clip: FrameClip, provider: FlowProvider, stride: int = 4, span: str = "delta") -> np.ndarray:
    """Concatenate the incoming and outgoing keyframe flows at heatmap resolution.

    Returns a (4, H/stride, W/stride) array ordered as ``MOTION_CHANNELS``.
    """
    if clip.frames.shape[0] < 3:
        raise ValueError("motion volume needs at least 3 frames")
    (a, k), (_, b) = motion_pairs(clip, span)
    prev = provider.estimate_flow(clip.frames[a], clip.frames[k])
    nxt = provider.estimate_flow(clip.frames[k], clip.frames[b])
    return np.concatenate([downsample_flow(prev, stride), downsample_flow(nxt, stride)]).astype(np.float32)


def flows_to_volume(prev: np.ndarray, nxt: np.ndarray, stride: int = 4) -> np.ndarray:
    """Same as :func:`build_motion_volume` for precomputed (2, H, W) flow arrays."""
    return np.concatenate(
        [downsample_flow(FlowField(*prev), stride), downsample_flow(FlowField(*nxt), stride)]
    ).astype(np.float32)


def make_provider(name: str, **kwargs) -> FlowProvider:
    if name == "oracle":
        return OracleFlowProvider(kwargs["scene"])
    if name == "blockmatch":
        return BlockMatchFlowProvider()
    if name == "file":
        return FileFlowProvider(kwargs["frames"], kwargs["flows"])
    raise ValueError(f"unknown flow provider {name!r}")
