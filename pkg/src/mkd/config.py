"""Experiment configuration: INI files with sections for data, models,
optimizers, augmentation, and the meta-learning settings."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, asdict

from .data import AugmentConfig
from .models import MLPConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "synthetic"  # synthetic | csv | idx
    data_path: str = ""  # csv path, or "images.idx,labels.idx"
    synthetic_n: int = 10000
    synthetic_dim: int = 20
    synthetic_classes: int = 10
    synthetic_spread: float = 1.0
    synthetic_seed: int = 0
    holdout_fraction: float = 0.10
    # models
    teacher_hidden: tuple = (256, 256)
    student_hidden: tuple = (32,)
    # student optimizer (SGD + cosine)
    lr: float = 0.05
    lr_min: float = 0.0005
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_epochs: int = 0
    # meta optimizer (AdamW)
    meta_lr: float = 3e-4
    meta_beta1: float = 0.9
    meta_beta2: float = 0.999
    meta_weight_decay: float = 5e-5
    tau_init: float = 4.0
    meta_objective: str = "eq8"  # eq8 | ce
    meta_grad: str = "exact"  # exact | fd
    meta_epoch_start: int = 0  # meta updates active in [start, end)
    meta_epoch_end: int = -1  # -1 means all epochs
    tau_squared: bool = False
    # augmentation (teacher training)
    crop_flip: bool = False
    label_smooth_eps: float = 0.0
    mixup_alpha: float = 0.0
    cutmix_alpha: float = 0.0
    # run
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0
    out_dir: str = "runs"

    def validate(self):
        if self.dataset not in ("synthetic", "csv", "idx"):
            raise ConfigError(f"data.dataset: unknown kind {self.dataset!r}")
        if self.dataset != "synthetic" and not self.data_path:
            raise ConfigError("data.path: required for csv/idx datasets")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError(
                f"data.holdout_fraction: must be in (0, 1), got {self.holdout_fraction}"
            )
        for name in ("lr", "lr_min", "meta_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"optim.{name}: must be non-negative")
        if self.lr <= 0:
            raise ConfigError("optim.lr: must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"optim.momentum: must be in [0, 1), got {self.momentum}")
        if self.tau_init <= 0.5:
            raise ConfigError(f"meta.tau_init: must exceed 0.5, got {self.tau_init}")
        if self.meta_objective not in ("eq8", "ce"):
            raise ConfigError(f"meta.objective: unknown value {self.meta_objective!r}")
        if self.meta_grad not in ("exact", "fd"):
            raise ConfigError(f"meta.grad: unknown value {self.meta_grad!r}")
        if self.epochs < 0:
            raise ConfigError(f"run.epochs: must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"run.batch_size: must be positive, got {self.batch_size}")
        if self.warmup_epochs > self.epochs:
            raise ConfigError("optim.warmup_epochs: exceeds run.epochs")
        if not 0 <= self.label_smooth_eps < 1:
            raise ConfigError("augment.label_smooth: must be in [0, 1)")
        return self

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            crop_flip=self.crop_flip,
            label_smooth_eps=self.label_smooth_eps,
            mixup_alpha=self.mixup_alpha,
            cutmix_alpha=self.cutmix_alpha,
        )

    def mlp_config(self, which: str, input_dim: int, num_classes: int) -> MLPConfig:
        hidden = self.teacher_hidden if which == "teacher" else self.student_hidden
        return MLPConfig(input_dim=input_dim, hidden_dims=tuple(hidden),
                         output_dim=num_classes)

    def meta_active(self, epoch: int) -> bool:
        end = self.epochs if self.meta_epoch_end < 0 else self.meta_epoch_end
        return self.meta_epoch_start <= epoch < end

    def to_dict(self):
        return asdict(self)


_SECTIONS = {
    "data": {
        "dataset": ("dataset", str),
        "path": ("data_path", str),
        "synthetic_n": ("synthetic_n", int),
        "synthetic_dim": ("synthetic_dim", int),
        "synthetic_classes": ("synthetic_classes", int),
        "synthetic_spread": ("synthetic_spread", float),
        "synthetic_seed": ("synthetic_seed", int),
        "holdout_fraction": ("holdout_fraction", float),
    },
    "model": {
        "teacher_hidden": ("teacher_hidden", "dims"),
        "student_hidden": ("student_hidden", "dims"),
    },
    "optim": {
        "lr": ("lr", float),
        "lr_min": ("lr_min", float),
        "momentum": ("momentum", float),
        "weight_decay": ("weight_decay", float),
        "warmup_epochs": ("warmup_epochs", int),
    },
    "meta": {
        "lr": ("meta_lr", float),
        "beta1": ("meta_beta1", float),
        "beta2": ("meta_beta2", float),
        "weight_decay": ("meta_weight_decay", float),
        "tau_init": ("tau_init", float),
        "objective": ("meta_objective", str),
        "grad": ("meta_grad", str),
        "epoch_start": ("meta_epoch_start", int),
        "epoch_end": ("meta_epoch_end", int),
        "tau_squared": ("tau_squared", "bool"),
    },
    "augment": {
        "crop_flip": ("crop_flip", "bool"),
        "label_smooth": ("label_smooth_eps", float),
        "mixup": ("mixup_alpha", float),
        "cutmix": ("cutmix_alpha", float),
    },
    "run": {
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", int),
        "seed": ("seed", int),
        "out_dir": ("out_dir", str),
    },
}


def load_config(path: str) -> ExperimentConfig:
    """Parse and fully validate an INI experiment config."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            attr, kind = _SECTIONS[section][key]
            try:
                if kind == "dims":
                    value = tuple(
                        int(v) for v in raw.replace(",", " ").split() if v
                    )
                elif kind == "bool":
                    value = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    value = kind(raw)
            except ValueError:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}")
            setattr(cfg, attr, value)
    return cfg.validate()
