"""On-disk clip format, flow files and a PoseTrack-style annotation reader.

Layout of one clip directory::

    frame_000.png ... frame_{2d}.png   8-bit RGB, lossless
    flow_000.flo ...                   consecutive-frame flows (i -> i+1)
    motion_prev.flo, motion_next.flo   keyframe -/+ delta flows (optional)
    clip.json

Flow files hold a 4-byte magic ``JMFL``, little-endian u16 height and width, then
float32 little-endian ``u`` followed by ``v`` in row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from jmpose.core.skeleton import JOINT_INDEX, JOINT_NAMES
from jmpose.core.synthetic import FlowField
from jmpose.core.types import Box, FrameClip, Keypoint, PersonPose

FLOW_MAGIC = b"JMFL"


def write_flow(path, flow: FlowField) -> None:
    H, W = flow.shape
    if H > 0xFFFF or W > 0xFFFF:
        raise ValueError("flow too large for the 16-bit header")
    body = np.stack([flow.u, flow.v]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC + struct.pack("<HH", H, W))
        fh.write(body.tobytes(order="C"))


def read_flow(path) -> FlowField:
    data = Path(path).read_bytes()
    if data[:4] != FLOW_MAGIC:
        raise ValueError(f"{path}: not a JMFL flow file")
    H, W = struct.unpack("<HH", data[4:8])
    body = np.frombuffer(data, dtype="<f4", offset=8)
    if body.size != 2 * H * W:
        raise ValueError(f"{path}: expected {2 * H * W} floats, found {body.size}")
    body = body.reshape(2, H, W).astype(np.float64)
    return FlowField(body[0], body[1])


def _save_png(path, frame):
    arr = np.round(np.clip(np.asarray(frame, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(np.moveaxis(arr, 0, -1)).save(path, format="PNG")


def _load_png(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.moveaxis(arr, -1, 0)


def save_clip(directory, clip: FrameClip, poses, flows, motion_flows=None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        _save_png(d / f"frame_{i:03d}.png", frame)
    flow_files = []
    for i, fl in enumerate(flows):
        name = f"flow_{i:03d}.flo"
        write_flow(d / name, fl)
        flow_files.append(name)
    ann = {
        "delta": clip.delta,
        "keyframe_index": clip.keyframe_index,
        "person_box": clip.person_box.to_list(),
        "meta": {k: bool(v) for k, v in clip.meta.items()},
        "joint_names": list(poses[0].joint_names),
        "poses": [p.to_array().tolist() for p in poses],
        "flow_files": flow_files,
    }
    if motion_flows is not None:
        prev, nxt = motion_flows
        write_flow(d / "motion_prev.flo", prev)
        write_flow(d / "motion_next.flo", nxt)
        ann["motion_flow_files"] = {"prev": "motion_prev.flo", "next": "motion_next.flo"}
    (d / "clip.json").write_text(json.dumps(ann, indent=1))
    return d


def load_clip(directory):
    """Returns ``(clip, poses, flows, motion_flows or None)``."""
    d = Path(directory)
    ann = json.loads((d / "clip.json").read_text())
    delta = int(ann["delta"])
    if int(ann.get("keyframe_index", delta)) != delta:
        raise ValueError(f"{d}: keyframe_index must equal delta")
    frames = np.stack([_load_png(d / f"frame_{i:03d}.png") for i in range(2 * delta + 1)])
    names = tuple(ann.get("joint_names", JOINT_NAMES))
    poses = [PersonPose.from_array(p, names) for p in ann["poses"]]
    flows = [read_flow(d / f) for f in ann.get("flow_files", [])]
    motion = None
    if "motion_flow_files" in ann:
        mf = ann["motion_flow_files"]
        motion = (read_flow(d / mf["prev"]), read_flow(d / mf["next"]))
    clip = FrameClip(frames, delta, Box.from_list(ann["person_box"]), dict(ann.get("meta", {})))
    return clip, poses, flows, motion


def list_clips(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    return sorted(p.parent for p in root.glob("*/clip.json"))


def load_posetrack_annotations(path) -> dict:
    """Read a PoseTrack-style JSON file into ``{image_id: [PersonPose, ...]}``.

    Keypoints arrive as flat ``[x, y, v, ...]`` triplets named by the category's
    ``keypoints`` list; names outside the 15-joint layout are dropped and missing
    ones become invisible. ``head_bottom``/``head_top`` may also appear as
    ``neck``/``head``.
    """
    data = json.loads(Path(path).read_text())
    aliases = {"neck": "head_bottom", "head": "head_top"}
    cats = data.get("categories") or [{}]
    names = cats[0].get("keypoints") or list(JOINT_NAMES)
    out: dict = {}
    for ann in data.get("annotations", []):
        flat = ann.get("keypoints")
        if not flat:
            continue
        trip = np.asarray(flat, dtype=np.float64).reshape(-1, 3)
        kps = [Keypoint(0.0, 0.0, False)] * len(JOINT_NAMES)
        for name, (x, y, v) in zip(names, trip):
            name = aliases.get(name, name)
            if name in JOINT_INDEX:
                kps[JOINT_INDEX[name]] = Keypoint(float(x), float(y), bool(v > 0))
        out.setdefault(ann["image_id"], []).append(PersonPose(tuple(kps)))
    return out
