"""Experiment configuration, loaded from TOML files.

Every field has a default; a file only needs the keys it changes. Nested
``[data]`` and ``[augment]`` tables map onto the dataclasses below.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train_dir: str | None = None  # on-disk datasets; synthetic ones are generated when unset
    val_dir: str | None = None
    n_train: int = 500
    n_val: int = 200
    seed: int = 1000
    image_shape: tuple = (96, 72)
    occlusion_prob: float = 0.25
    defocus_prob: float = 0.25
    noise_sigma: float = 0.02


@dataclass
class AugmentConfig:
    enabled: bool = True
    rotation: float = 45.0
    scale: tuple = (0.65, 1.35)
    flip_prob: float = 0.0
    truncation_prob: float = 0.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    delta: int = 2
    layers: int = 4
    channels: int = 32
    variant: str = "full"
    heatmap_residual: bool = True
    alpha: float = 0.01
    sigma_gt: float = 2.0
    lr: float = 1e-4
    lr_decay_epochs: tuple = (5, 10, 15)
    lr_decay_factor: float = 0.1
    weight_decay: float = 1e-2
    epochs: int = 20
    batch_size: int = 8
    estimator_lr: float = 1e-3
    estimator_steps: int = 1
    relevancy_floor: bool = True
    estimator_hidden: int = 64
    pretrain_epochs: int = 10
    pretrain_lr: float = 2e-3
    flow_provider: str = "oracle"
    motion_span: str = "delta"
    pck_tau: float = 0.2
    num_threads: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.data, dict):
            self.data = _build(DataConfig, self.data, "data")
        if isinstance(self.augment, dict):
            self.augment = _build(AugmentConfig, self.augment, "augment")
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        self.data.image_shape = tuple(int(s) for s in self.data.image_shape)
        self.augment.scale = tuple(float(s) for s in self.augment.scale)
        self.validate()

    def validate(self):
        from jmpose.model import UNIMPLEMENTED_VARIANTS, VARIANTS

        if self.variant in UNIMPLEMENTED_VARIANTS:
            raise NotImplementedError(f"variant {self.variant!r}: {UNIMPLEMENTED_VARIANTS[self.variant]}")

        checks = [
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.layers >= 1, "layers must be >= 1"),
            (self.delta >= 1, "delta must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.estimator_steps >= 1, "estimator_steps must be >= 1"),
            (self.pretrain_epochs >= 0, "pretrain_epochs must be >= 0"),
            (self.batch_size >= 2, "batch_size must be >= 2 (the MI bounds need in-batch negatives)"),
            (self.lr > 0 and self.estimator_lr > 0, "learning rates must be positive"),
            (self.sigma_gt > 0, "sigma_gt must be positive"),
            (0 < self.pck_tau, "pck_tau must be positive"),
            (self.variant in VARIANTS, f"variant must be one of {VARIANTS}"),
            (self.flow_provider in ("oracle", "file", "blockmatch"), "flow_provider must be oracle, file or blockmatch"),
            (self.motion_span in ("delta", "adjacent"), "motion_span must be delta or adjacent"),
            (list(self.lr_decay_epochs) == sorted(self.lr_decay_epochs), "lr_decay_epochs must be ascending"),
            (all(s % 4 == 0 for s in self.data.image_shape), "image sides must be divisible by 4"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.variant == "no_io" else self.alpha

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config")

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file {path} not found") from e
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        return cls.from_dict(raw)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"[{where}]: {e}") from e


def lr_at(epoch: int, config: ExperimentConfig) -> float:
    """Learning rate for ``epoch`` (0-based): ``lr * factor ** (#decay epochs <= epoch)``."""
    n = sum(1 for e in config.lr_decay_epochs if epoch >= e)
    lr = config.lr
    for _ in range(n):
        lr = lr * config.lr_decay_factor
    return float(f"{lr:.12g}")


def dump_toml(config: ExperimentConfig, path) -> None:
    """Write a config back out (flat scalars, tuples as arrays, nested tables)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        return repr(v)

    lines, tables = [], []
    for k, v in config.to_dict().items():
        if isinstance(v, dict):
            tables.append((k, v))
        elif v is not None:
            lines.append(f"{k} = {fmt(v)}")
    for name, t in tables:
        lines.append(f"\n[{name}]")
        lines += [f"{k} = {fmt(v)}" for k, v in t.items() if v is not None]
    Path(path).write_text("\n".join(lines) + "\n")
