"""Box-relative keypoint accuracy reported per joint and averaged."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from jmpose.core.skeleton import JOINT_NAMES


@dataclass
class MetricsReport:
    per_joint: dict
    mAP: float
    split: str = "val"
    subset: dict = field(default_factory=dict)
    num_clips: int = 0

    def __post_init__(self):
        for name, ap in self.per_joint.items():
            if not 0.0 <= ap <= 100.0:
                raise ValueError(f"AP for {name} out of range: {ap}")

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def score_predictions(pred_xy, gt, boxes, tau: float = 0.2, split: str = "val", subset=None, joint_names=JOINT_NAMES) -> MetricsReport:
    """Score (N, K, 2) predictions against (N, K, 3) ``[x, y, visible]`` ground truth.

    A visible joint counts as correct when it lies within ``tau`` times the diagonal
    of its clip's ``(cx, cy, w, h)`` box. Invisible joints are ignored; joints never
    visible are left out of the mean.
    """
    pred_xy = np.asarray(pred_xy, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    if len(gt) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if pred_xy.shape != gt[..., :2].shape:
        raise ValueError(f"predictions {pred_xy.shape} do not match ground truth {gt.shape}")
    diag = np.hypot(boxes[:, 2], boxes[:, 3])
    dist = np.linalg.norm(pred_xy - gt[..., :2], axis=-1)
    visible = gt[..., 2] > 0
    correct = (dist <= tau * diag[:, None]) & visible
    per_joint = {}
    for k, name in enumerate(joint_names):
        n_vis = int(visible[:, k].sum())
        if n_vis:
            per_joint[name] = 100.0 * float(correct[:, k].sum()) / n_vis
    if not per_joint:
        raise ValueError("no visible ground-truth joints")
    m = float(np.mean(list(per_joint.values())))
    return MetricsReport(per_joint, m, split, dict(subset or {}), len(gt))
