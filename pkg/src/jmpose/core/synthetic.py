"""Articulated stick-figure clips with exact poses and exact optical flow.

Every limb is a rigid 2-px capsule, so the displacement of any pixel the limb
covers is the rigid transform that carries the limb's endpoints from one frame to
the next. That gives pixel-exact flow without any estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from jmpose.core.heatmaps import crop_and_enlarge
from jmpose.core.skeleton import JOINT_NAMES, LIMB_COLORS, LIMBS
from jmpose.core.types import Box, FrameClip, Keypoint, PersonPose

SUPERSAMPLE = 4
LIMB_HALF_WIDTH = 1.0
OCCLUDER_OWNER = len(LIMBS)

DEFAULT_BONES = {
    "torso": 22.0,
    "hip_half": 5.0,
    "shoulder_half": 8.0,
    "neck": 6.0,
    "head": 6.0,
    "upper_arm": 12.0,
    "forearm": 11.0,
    "thigh": 15.0,
    "shin": 14.0,
}

ANGLE_KEYS = (
    "torso",
    "head",
    "r_upper_arm",
    "r_forearm",
    "l_upper_arm",
    "l_forearm",
    "r_thigh",
    "r_shin",
    "l_thigh",
    "l_shin",
)

UP = -np.pi / 2
DOWN = np.pi / 2

REST_ANGLES = {
    "torso": UP,
    "head": UP,
    "r_upper_arm": DOWN + 0.3,
    "r_forearm": DOWN + 0.2,
    "l_upper_arm": DOWN - 0.3,
    "l_forearm": DOWN - 0.2,
    "r_thigh": DOWN + 0.1,
    "r_shin": DOWN,
    "l_thigh": DOWN - 0.1,
    "l_shin": DOWN,
}


@dataclass(frozen=True)
class FigureSpec:
    bones: dict = field(default_factory=lambda: dict(DEFAULT_BONES))
    scale: float = 1.0


@dataclass(frozen=True)
class Trajectory:
    """Keyframe root (pelvis) position and absolute limb angles, plus per-frame rates."""

    root: tuple[float, float] = (36.0, 50.0)
    root_velocity: tuple[float, float] = (0.0, 0.0)
    angles: dict = field(default_factory=lambda: dict(REST_ANGLES))
    angular_velocity: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Occluder:
    cx: float
    cy: float
    w: float
    h: float
    vx: float = 0.0
    vy: float = 0.0
    color: tuple[float, float, float] = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    figure: FigureSpec = field(default_factory=FigureSpec)
    trajectory: Trajectory = field(default_factory=Trajectory)
    blur_sigma: float = 0.0
    occluder: Occluder | None = None
    noise_sigma: float = 0.0
    seed: int = 0
    delta: int = 2
    image_shape: tuple[int, int] = (96, 72)
    background: tuple[float, float, float] = (0.1, 0.1, 0.1)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement; pixel p of the first frame lands on p + (u, v)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must share a shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def stack(self) -> np.ndarray:
        return np.stack([self.u, self.v])

    def __neg__(self) -> "FlowField":
        return FlowField(-self.u, -self.v)

    @classmethod
    def zeros(cls, shape) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape))


def _unit(theta):
    return np.array([np.cos(theta), np.sin(theta)])


def joint_positions(figure: FigureSpec, root, angles) -> dict[str, np.ndarray]:
    b = {k: v * figure.scale for k, v in figure.bones.items()}
    pelvis = np.asarray(root, dtype=np.float64)
    t = angles["torso"]
    neck = pelvis + b["torso"] * _unit(t)
    pos = {
        "pelvis": pelvis,
        "head_bottom": neck,
        "right_hip": pelvis + b["hip_half"] * _unit(t - np.pi / 2),
        "left_hip": pelvis + b["hip_half"] * _unit(t + np.pi / 2),
        "right_shoulder": neck + b["shoulder_half"] * _unit(t - np.pi / 2),
        "left_shoulder": neck + b["shoulder_half"] * _unit(t + np.pi / 2),
    }
    pos["nose"] = neck + b["neck"] * _unit(angles["head"])
    pos["head_top"] = pos["nose"] + b["head"] * _unit(angles["head"])
    for side, s in (("r", "right"), ("l", "left")):
        pos[f"{s}_elbow"] = pos[f"{s}_shoulder"] + b["upper_arm"] * _unit(angles[f"{side}_upper_arm"])
        pos[f"{s}_wrist"] = pos[f"{s}_elbow"] + b["forearm"] * _unit(angles[f"{side}_forearm"])
        pos[f"{s}_knee"] = pos[f"{s}_hip"] + b["thigh"] * _unit(angles[f"{side}_thigh"])
        pos[f"{s}_ankle"] = pos[f"{s}_knee"] + b["shin"] * _unit(angles[f"{side}_shin"])
    return pos


def frame_joints(spec: SyntheticSceneSpec, frame: int) -> dict[str, np.ndarray]:
    tr = spec.trajectory
    dt = frame - spec.delta
    root = np.asarray(tr.root) + dt * np.asarray(tr.root_velocity)
    angles = {k: tr.angles[k] + dt * tr.angular_velocity.get(k, 0.0) for k in ANGLE_KEYS}
    return joint_positions(spec.figure, root, angles)


def _pose_from_joints(joints, image_shape) -> PersonPose:
    H, W = image_shape
    kps = []
    for name in JOINT_NAMES:
        x, y = joints[name]
        kps.append(Keypoint(float(x), float(y), bool(0 <= x < W and 0 <= y < H)))
    return PersonPose(tuple(kps))


def _capsule_coverage(p, q, image_shape, half_width=LIMB_HALF_WIDTH, ss=SUPERSAMPLE):
    """Anti-aliased coverage of a segment capsule, plus the pixel window it lives in."""
    H, W = image_shape
    lo = np.floor(np.minimum(p, q) - half_width - 1).astype(int)
    hi = np.ceil(np.maximum(p, q) + half_width + 1).astype(int)
    x0, y0 = max(lo[0], 0), max(lo[1], 0)
    x1, y1 = min(hi[0] + 1, W), min(hi[1] + 1, H)
    if x0 >= x1 or y0 >= y1:
        return None
    sub = (np.arange(ss) + 0.5) / ss - 0.5
    xs = (np.arange(x0, x1)[:, None] + sub[None, :]).ravel()
    ys = (np.arange(y0, y1)[:, None] + sub[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys)
    d = q - p
    denom = float(d @ d)
    if denom == 0.0:
        t = np.zeros_like(X)
    else:
        t = np.clip(((X - p[0]) * d[0] + (Y - p[1]) * d[1]) / denom, 0.0, 1.0)
    dist2 = (X - (p[0] + t * d[0])) ** 2 + (Y - (p[1] + t * d[1])) ** 2
    inside = (dist2 <= half_width**2).astype(np.float64)
    cov = inside.reshape(y1 - y0, ss, x1 - x0, ss).mean(axis=(1, 3))
    return cov, (slice(y0, y1), slice(x0, x1))


def _rect_coverage(cx, cy, w, h, image_shape, ss=SUPERSAMPLE):
    H, W = image_shape
    sub = (np.arange(ss) + 0.5) / ss - 0.5
    xs = (np.arange(W)[:, None] + sub[None, :]).ravel()
    ys = (np.arange(H)[:, None] + sub[None, :]).ravel()
    inx = (np.abs(xs - cx) <= w / 2).astype(np.float64).reshape(W, ss).mean(1)
    iny = (np.abs(ys - cy) <= h / 2).astype(np.float64).reshape(H, ss).mean(1)
    return iny[:, None] * inx[None, :]


@dataclass
class RenderedScene:
    """Everything the generator knows about a clip, kept for the oracle flow provider."""

    spec: SyntheticSceneSpec
    frames: np.ndarray  # (T, 3, H, W)
    joints: list  # per frame dict name -> (x, y)
    owner: np.ndarray  # (T, H, W) int: limb index, OCCLUDER_OWNER, or -1 background
    figure_coverage: np.ndarray  # (T, H, W) total limb coverage in [0, 1]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def figure_mask(self, frame: int, threshold: float = 0.5) -> np.ndarray:
        return self.figure_coverage[frame] >= threshold

    def pair_flow(self, a: int, b: int) -> FlowField:
        """Exact displacement of every non-background pixel of frame ``a`` into frame ``b``."""
        H, W = self.spec.image_shape
        u = np.zeros((H, W))
        v = np.zeros((H, W))
        if a == b:
            return FlowField(u, v)
        ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
        own = self.owner[a]
        ja, jb = self.joints[a], self.joints[b]
        for li, (pa_name, qa_name) in enumerate(LIMBS):
            sel = own == li
            if not sel.any():
                continue
            pa, qa = ja[pa_name], ja[qa_name]
            pb, qb = jb[pa_name], jb[qa_name]
            rot = np.arctan2(*(qb - pb)[::-1]) - np.arctan2(*(qa - pa)[::-1])
            c, s = np.cos(rot), np.sin(rot)
            rx = xs[sel] - pa[0]
            ry = ys[sel] - pa[1]
            u[sel] = pb[0] + c * rx - s * ry - xs[sel]
            v[sel] = pb[1] + s * rx + c * ry - ys[sel]
        occ = self.spec.occluder
        if occ is not None:
            sel = own == OCCLUDER_OWNER
            u[sel] = occ.vx * (b - a)
            v[sel] = occ.vy * (b - a)
        return FlowField(u, v)


def render_scene(spec: SyntheticSceneSpec) -> RenderedScene:
    H, W = spec.image_shape
    T = 2 * spec.delta + 1
    rng = np.random.default_rng(spec.seed)
    bg = np.asarray(spec.background, dtype=np.float64)[:, None, None]
    frames = np.empty((T, 3, H, W))
    owner = np.full((T, H, W), -1, dtype=np.int64)
    coverage = np.zeros((T, H, W))
    all_joints = []
    for f in range(T):
        joints = frame_joints(spec, f)
        all_joints.append(joints)
        img = np.broadcast_to(bg, (3, H, W)).copy()
        owner_weight = np.zeros((H, W))
        for li, (a, b) in enumerate(LIMBS):
            res = _capsule_coverage(joints[a], joints[b], (H, W))
            if res is None:
                continue
            cov, win = res
            color = np.asarray(LIMB_COLORS[li])[:, None, None]
            img[:, win[0], win[1]] = img[:, win[0], win[1]] * (1 - cov) + color * cov
            # owner = limb with the largest visible share after compositing
            ow = owner_weight[win]
            ow *= 1 - cov
            take = cov > ow
            owner[f][win][take] = li
            ow[take] = cov[take]
            c = coverage[f][win]
            c[:] = c + cov * (1 - c)
        if not (coverage[f] > 0).any():
            raise ValueError(f"figure leaves the canvas entirely in frame {f}")
        occ = spec.occluder
        if occ is not None:
            dt = f - spec.delta
            cov = _rect_coverage(occ.cx + dt * occ.vx, occ.cy + dt * occ.vy, occ.w, occ.h, (H, W))
            color = np.asarray(occ.color)[:, None, None]
            img = img * (1 - cov) + color * cov
            owner[f][cov >= 0.5] = OCCLUDER_OWNER
        if spec.blur_sigma > 0:
            img = gaussian_filter(img, sigma=(0, spec.blur_sigma, spec.blur_sigma), mode="nearest")
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
        # quantise to 8 bits so lossless PNG storage round-trips exactly
        frames[f] = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return RenderedScene(spec, frames.astype(np.float32), all_joints, owner, coverage)


def person_box(pose: PersonPose, image_shape, factor: float = 0.25) -> Box:
    xy = pose.xy[pose.visible]
    if len(xy) == 0:
        raise ValueError("pose has no visible joints")
    pad = LIMB_HALF_WIDTH
    tight = Box.from_corners(
        xy[:, 0].min() - pad, xy[:, 1].min() - pad, xy[:, 0].max() + pad, xy[:, 1].max() + pad
    )
    return crop_and_enlarge(tight, factor, image_shape)


def scene_to_clip(scene: RenderedScene):
    spec = scene.spec
    poses = [_pose_from_joints(j, spec.image_shape) for j in scene.joints]
    meta = {"occluded": spec.occluder is not None, "defocused": spec.blur_sigma > 0}
    clip = FrameClip(scene.frames, spec.delta, person_box(poses[spec.delta], spec.image_shape), meta)
    flows = [scene.pair_flow(i, i + 1) for i in range(scene.num_frames - 1)]
    return clip, poses, flows


def generate_synthetic_clip(spec: SyntheticSceneSpec):
    """Render ``spec`` and return ``(clip, per-frame poses, consecutive flows)``."""
    return scene_to_clip(render_scene(spec))


def random_scene_spec(
    rng: np.random.Generator,
    image_shape=(96, 72),
    delta: int = 2,
    occlusion_prob: float = 0.25,
    defocus_prob: float = 0.25,
    noise_sigma: float = 0.02,
    max_tries: int = 100,
) -> SyntheticSceneSpec:
    """Draw a plausible moving figure that stays on the canvas in every frame."""
    H, W = image_shape
    seed = int(rng.integers(0, 2**31 - 1))
    for _ in range(max_tries):
        scale = rng.uniform(0.85, 1.1) * H / 96.0
        root = (W / 2 + rng.uniform(-6, 6) * W / 72, H * 0.53 + rng.uniform(-4, 4) * H / 96)
        angles = {
            "torso": UP + rng.uniform(-0.25, 0.25),
            "head": UP + rng.uniform(-0.35, 0.35),
            "r_upper_arm": DOWN + rng.uniform(0.0, 1.6),
            "l_upper_arm": DOWN - rng.uniform(0.0, 1.6),
            "r_thigh": DOWN + rng.uniform(0.0, 0.5),
            "l_thigh": DOWN - rng.uniform(0.0, 0.5),
        }
        angles["r_forearm"] = angles["r_upper_arm"] + rng.uniform(-1.2, 1.2)
        angles["l_forearm"] = angles["l_upper_arm"] + rng.uniform(-1.2, 1.2)
        angles["r_shin"] = angles["r_thigh"] + rng.uniform(-0.4, 0.4)
        angles["l_shin"] = angles["l_thigh"] + rng.uniform(-0.4, 0.4)
        omega = {k: rng.uniform(-0.08, 0.08) for k in ANGLE_KEYS}
        omega["torso"] = rng.uniform(-0.02, 0.02)
        traj = Trajectory(
            root=root,
            root_velocity=(rng.uniform(-1.5, 1.5), rng.uniform(-1.0, 1.0)),
            angles=angles,
            angular_velocity=omega,
        )
        spec = SyntheticSceneSpec(
            figure=FigureSpec(scale=scale),
            trajectory=traj,
            noise_sigma=noise_sigma,
            seed=seed,
            delta=delta,
            image_shape=(H, W),
            background=tuple(rng.uniform(0.0, 0.25, size=3)),
        )
        if not all(_inside(frame_joints(spec, f), H, W, margin=2.0) for f in range(2 * delta + 1)):
            continue
        if rng.uniform() < occlusion_prob:
            key = frame_joints(spec, delta)
            target = key[rng.choice(["right_wrist", "left_wrist", "right_elbow", "left_elbow",
                                     "right_knee", "left_knee", "right_ankle", "left_ankle"])]
            occ = Occluder(
                cx=float(target[0] + rng.uniform(-3, 3)),
                cy=float(target[1] + rng.uniform(-3, 3)),
                w=float(rng.uniform(14, 24) * W / 72),
                h=float(rng.uniform(12, 20) * H / 96),
                vx=float(rng.uniform(-1.0, 1.0)),
                vy=float(rng.uniform(-1.0, 1.0)),
                color=tuple(float(c) for c in rng.uniform(0.3, 0.7, size=3)),
            )
            spec = replace(spec, occluder=occ)
        if rng.uniform() < defocus_prob:
            spec = replace(spec, blur_sigma=float(rng.uniform(1.5, 2.5)))
        return spec
    raise RuntimeError("could not sample an on-canvas figure")


def _inside(joints, H, W, margin):
    xy = np.array([joints[n] for n in JOINT_NAMES])
    return bool(
        (xy[:, 0] >= margin).all()
        and (xy[:, 0] < W - margin).all()
        and (xy[:, 1] >= margin).all()
        and (xy[:, 1] < H - margin).all()
    )
