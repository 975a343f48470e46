"""Training loop, evaluation, checkpoints and ablation runs."""

from __future__ import annotations

import io as _io
import json
import logging
import pickle
import random
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import torch

from jmpose.backbone import extract_frame_heatmaps
from jmpose.config import ExperimentConfig, lr_at
from jmpose.core.augment import AugmentParams, AugmentRanges
from jmpose.core.heatmaps import decode_batch
from jmpose.data import PoseDataset, build_synthetic_dataset, load_dataset, make_batch, select_challenging_subset
from jmpose.info_orthogonality import io_loss, io_terms
from jmpose.losses import heatmap_loss, total_loss
from jmpose.metrics import MetricsReport, score_predictions
from jmpose.model import JMPose, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
VAL_SEED_OFFSET = 7919


class NumericalError(RuntimeError):
    """A non-finite loss; ``batch_id`` names the offending batch."""

    def __init__(self, message, batch_id: dict):
        super().__init__(f"{message} at {batch_id}")
        self.batch_id = batch_id


# --- checkpoints ---


class _CanonicalPickler(pickle.Pickler):
    """Pickler without the object memo, so output depends on values only.

    The default memo records which objects are shared in memory (e.g. one
    joint-name string reused across history records); a loaded copy shares
    differently and would re-serialise to different bytes. Tensor storages are
    still deduplicated by torch's persistent ids.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.fast = True


_canonical_pickle = SimpleNamespace(Pickler=_CanonicalPickler, __name__="pickle")


def _dump(obj) -> bytes:
    buf = _io.BytesIO()
    torch.save(obj, buf, pickle_module=_canonical_pickle)
    return buf.getvalue()


@dataclass
class Checkpoint:
    config: dict
    epoch: int
    model_state: dict
    optimizer_state: dict | None = None
    estimator_optimizer_state: dict | None = None
    rng_state: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    pretrained: bool = False
    version: int = CHECKPOINT_VERSION

    def to_bytes(self) -> bytes:
        return _dump(self.__dict__)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        d = torch.load(_io.BytesIO(data), map_location="cpu", weights_only=False)
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    @property
    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)

    def build_model(self) -> JMPose:
        model = build_model(self.experiment)
        model.load_state_dict(self.model_state)
        return model


def build_model(config: ExperimentConfig) -> JMPose:
    return JMPose(
        ModelConfig(
            num_joints=15,
            delta=config.delta,
            channels=config.channels,
            layers=config.layers,
            variant=config.variant,
            heatmap_residual=config.heatmap_residual,
            estimator_hidden=config.estimator_hidden,
        )
    )


def _rng_snapshot() -> dict:
    return {
        "torch": torch.get_rng_state(),
        "numpy": np.random.get_state(),
        "python": random.getstate(),
    }


def _rng_restore(state: dict) -> None:
    if not state:
        return
    torch.set_rng_state(state["torch"])
    np.random.set_state(state["numpy"])
    random.setstate(state["python"])


# --- data ---


@lru_cache(maxsize=8)
def _synthetic(n, seed, image_shape, delta, span, occ, dfc, noise):
    return build_synthetic_dataset(
        n, seed, image_shape, delta, span, occlusion_prob=occ, defocus_prob=dfc, noise_sigma=noise
    )


def load_split(config: ExperimentConfig, split: str) -> PoseDataset:
    """Train or val split: the configured directory, else a seeded synthetic set."""
    d = config.data
    path = d.train_dir if split == "train" else d.val_dir
    if path:
        ds = load_dataset(path, config.flow_provider, config.motion_span)
        if ds.delta != config.delta:
            raise ValueError(f"dataset delta {ds.delta} differs from config delta {config.delta}")
        return ds
    if config.flow_provider != "oracle":
        raise ValueError("in-memory synthetic data only supports the oracle flow provider")
    n = d.n_train if split == "train" else d.n_val
    seed = d.seed if split == "train" else d.seed + VAL_SEED_OFFSET
    return _synthetic(
        n, seed, tuple(d.image_shape), config.delta, config.motion_span,
        d.occlusion_prob, d.defocus_prob, d.noise_sigma,
    )


def _epoch_batches(n, batch_size, seed, epoch, stream):
    """Shuffled index batches for one epoch; a trailing batch of one clip is dropped."""
    rng = np.random.default_rng([seed, stream, epoch])
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches[-1]) < 2:
        batches = batches[:-1]
    return batches, rng


def _augment_params(config, rng, count, shape):
    if not config.augment.enabled:
        return None
    a = config.augment
    ranges = AugmentRanges(a.rotation, tuple(a.scale), a.flip_prob, a.truncation_prob)
    return [ranges.sample(rng, shape) for _ in range(count)]


# --- training ---


def _check_finite(value, batch_id):
    if not torch.isfinite(value).all():
        raise NumericalError("non-finite loss", batch_id)


def pretrain_backbone(model: JMPose, dataset: PoseDataset, config: ExperimentConfig) -> list[float]:
    """Supervise the per-frame encoder on every frame and the aggregator on the keyframe."""
    params = list(model.encoder.parameters()) + list(model.aggregator.parameters())
    opt = torch.optim.Adam(params, lr=config.pretrain_lr)
    losses = []
    for epoch in range(config.pretrain_epochs):
        batches, rng = _epoch_batches(len(dataset), config.batch_size, config.seed, epoch, stream=1)
        total = 0.0
        for step, idx in enumerate(batches):
            aug = _augment_params(config, rng, len(idx), dataset.image_shape)
            b = make_batch(dataset, idx, config.sigma_gt, aug, frame_targets=True)
            frame_hm = extract_frame_heatmaps(b.frames, model.encoder)
            loss = heatmap_loss(b.frame_targets, frame_hm) + heatmap_loss(b.target, model.aggregator(frame_hm))
            _check_finite(loss, {"phase": "pretrain", "epoch": epoch + 1, "step": step, "clips": idx.tolist()})
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        losses.append(total / max(len(batches), 1))
        log.info("pretrain epoch %d loss %.6f", epoch + 1, losses[-1])
    return losses


def _make_optimizers(model: JMPose, config: ExperimentConfig):
    opt = torch.optim.AdamW(model.model_parameters(), lr=config.lr, weight_decay=config.weight_decay)
    est_params = list(model.estimators.parameters())
    est_opt = torch.optim.Adam(est_params, lr=config.estimator_lr) if est_params else None
    return opt, est_opt


def training_io_loss(m, j, h_cond, est, relevancy_floor: bool = True) -> torch.Tensor:
    """Per-layer orthogonality loss as used for the model update.

    With ``relevancy_floor`` the relevancy upper bound is clamped at zero (zero
    gradient below it). Mutual information is non-negative, so a negative value is
    an estimator artefact, and letting the model push it further down destabilises
    training. Without the floor this is exactly ``io_loss``.
    """
    if not relevancy_floor:
        return io_loss(m, j, h_cond, est)
    t = io_terms(m, j, h_cond, est)
    return t.relevancy.clamp(min=0.0) - t.complement + t.redundancy


def train_step(model, batch, opt, est_opt, alpha, batch_id, estimator_steps=1, relevancy_floor=True):
    """One update: estimators first on detached features, then the model on L_H + alpha * sum L_IO."""
    out = model(batch.frames, batch.motion)
    l_h = heatmap_loss(batch.target, out.heatmaps)
    l_io = []
    if alpha > 0 and out.io_pairs:
        for _ in range(estimator_steps):
            est_loss = sum(
                est.objective(m.detach(), j.detach(), out.h_hat.detach())
                for (m, j), est in zip(out.io_pairs, model.estimators)
            )
            _check_finite(est_loss, {**batch_id, "phase": "estimator"})
            est_opt.zero_grad()
            est_loss.backward()
            est_opt.step()
        # the aggregated heatmap is the conditioning signal; it is not shaped by L_IO
        h_cond = out.h_hat.detach()
        l_io = [
            training_io_loss(m, j, h_cond, est, relevancy_floor)
            for (m, j), est in zip(out.io_pairs, model.estimators)
        ]
    loss = total_loss(l_h, l_io, alpha)
    _check_finite(loss, batch_id)
    opt.zero_grad()
    loss.backward()
    opt.step()
    return l_h.item(), [t.item() for t in l_io]


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def train(
    config: ExperimentConfig,
    resume: Checkpoint | None = None,
    train_set: PoseDataset | None = None,
    val_set: PoseDataset | None = None,
    metrics_path=None,
    checkpoint_dir=None,
) -> Checkpoint:
    """Train to ``config.epochs`` (continuing from ``resume`` if given) and return the final checkpoint.

    Each epoch appends ``{epoch, l_h, l_io, mAP, per_joint}`` to the history and,
    when ``metrics_path`` is set, to that JSON-lines file.
    """
    torch.set_num_threads(config.num_threads)
    if resume is None:
        torch.manual_seed(config.seed)
        model = build_model(config)
        opt, est_opt = _make_optimizers(model, config)
        start, history, pretrained = 0, [], False
    else:
        model = resume.build_model()
        opt, est_opt = _make_optimizers(model, config)
        if resume.optimizer_state is not None:
            opt.load_state_dict(resume.optimizer_state)
        if est_opt is not None and resume.estimator_optimizer_state is not None:
            est_opt.load_state_dict(resume.estimator_optimizer_state)
        _rng_restore(resume.rng_state)
        start, history, pretrained = resume.epoch, list(resume.history), resume.pretrained

    def snapshot(epoch):
        return Checkpoint(
            config=config.to_dict(),
            epoch=epoch,
            model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
            optimizer_state=opt.state_dict() if epoch > 0 else None,
            estimator_optimizer_state=est_opt.state_dict() if (est_opt is not None and epoch > 0) else None,
            rng_state=_rng_snapshot(),
            history=list(history),
            pretrained=pretrained,
        )

    if config.epochs <= start:
        return snapshot(start)

    train_set = train_set if train_set is not None else load_split(config, "train")
    val_set = val_set if val_set is not None else load_split(config, "val")
    if not pretrained and config.pretrain_epochs > 0:
        pretrain_backbone(model, train_set, config)
    pretrained = True

    alpha = config.effective_alpha
    for epoch in range(start, config.epochs):
        _set_lr(opt, lr_at(epoch, config))
        model.train()
        batches, rng = _epoch_batches(len(train_set), config.batch_size, config.seed, epoch, stream=0)
        l_h_sum, l_io_sum = 0.0, None
        for step, idx in enumerate(batches):
            aug = _augment_params(config, rng, len(idx), train_set.image_shape)
            batch = make_batch(train_set, idx, config.sigma_gt, aug)
            batch_id = {"epoch": epoch + 1, "step": step, "clips": idx.tolist()}
            l_h, l_io = train_step(
                model, batch, opt, est_opt, alpha, batch_id, config.estimator_steps, config.relevancy_floor
            )
            l_h_sum += l_h
            l_io_sum = l_io if l_io_sum is None else [a + b for a, b in zip(l_io_sum, l_io)]
        n = len(batches)
        report = evaluate_model(model, val_set, config.pck_tau, config.batch_size, config.sigma_gt)
        record = {
            "epoch": epoch + 1,
            "l_h": l_h_sum / n,
            "l_io": [v / n for v in (l_io_sum or [])],
            "mAP": report.mAP,
            "per_joint": report.per_joint,
            "lr": lr_at(epoch, config),
        }
        history.append(record)
        log.info("epoch %d l_h %.6f mAP %.2f", epoch + 1, record["l_h"], record["mAP"])
        if metrics_path is not None:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        if checkpoint_dir is not None:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            snapshot(epoch + 1).save(Path(checkpoint_dir) / f"epoch_{epoch + 1:03d}.pt")
    return snapshot(config.epochs)


# --- evaluation ---


@torch.no_grad()
def predict(model: JMPose, dataset: PoseDataset, batch_size: int = 16, sigma: float = 2.0) -> np.ndarray:
    """Decoded keyframe joint positions (N, K, 2) in image pixels."""
    model.eval()
    out = []
    for i in range(0, len(dataset), batch_size):
        b = make_batch(dataset, np.arange(i, min(i + batch_size, len(dataset))), sigma)
        out.append(decode_batch(model(b.frames, b.motion).heatmaps.numpy()))
    return np.concatenate(out)


def evaluate_model(model, dataset: PoseDataset, tau=0.2, batch_size=16, sigma=2.0, split="val") -> MetricsReport:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    pred = predict(model, dataset, batch_size, sigma)
    subset = {"occluded": bool(dataset.occluded.all()), "defocused": bool(dataset.defocused.all())}
    return score_predictions(pred, dataset.keyframe_poses(), dataset.boxes, tau, split, subset)


def evaluate(checkpoint: Checkpoint, dataset: PoseDataset, pck_tau: float = 0.2, subset: str | None = None) -> MetricsReport:
    """Score a checkpoint on ``dataset``; ``subset`` may be ``challenging`` or ``clean``."""
    split = "all"
    if subset == "challenging":
        dataset, split = select_challenging_subset(dataset), "challenging"
    elif subset == "clean":
        dataset, split = dataset.subset(np.flatnonzero(~dataset.challenging)), "clean"
    elif subset is not None:
        raise ValueError(f"unknown subset {subset!r}")
    cfg = checkpoint.experiment
    torch.set_num_threads(cfg.num_threads)
    return evaluate_model(checkpoint.build_model(), dataset, pck_tau, cfg.batch_size, cfg.sigma_gt, split)


def ablate(config: ExperimentConfig, variant: str, **train_kw) -> MetricsReport:
    """Train and evaluate ``variant`` with everything else in ``config`` unchanged."""
    cfg = config.replace(variant=variant)
    ckpt = train(cfg, **train_kw)
    val = train_kw.get("val_set")
    if val is None:
        val = load_split(cfg, "val")
    return evaluate(ckpt, val, cfg.pck_tau)


__all__ = [
    "AugmentParams",
    "Checkpoint",
    "NumericalError",
    "ablate",
    "build_model",
    "evaluate",
    "evaluate_model",
    "load_split",
    "predict",
    "pretrain_backbone",
    "train",
    "train_step",
    "training_io_loss",
]
