"""Training loops: teacher training, fixed-temperature and meta distillation,
the temperature grid search, metrics emission, and run checkpointing."""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, grad, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .data import (
    CyclicValBatches,
    Dataset,
    gaussian_mixture,
    iter_batches,
    load_csv,
    load_idx_dataset,
    split_train_val,
)
from .losses import ce_loss, one_hot
from .models import freeze, mlp_forward, mlp_init, meta_init, tempnet_forward
from .optim import (
    AdamWState,
    SGDState,
    cosine_schedule,
    fixed_temps,
    kd_student_update,
    mkd_step,
    sgd_step,
)


class MetricsWriter:
    """Append-only JSON-lines metrics file, one object per record."""

    FIELDS = (
        "step", "epoch", "split", "loss", "accuracy",
        "tau_s", "tau_t", "lr", "meta_grad_norm", "wall_ms",
    )

    def __init__(self, path):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._f = open(path, "a")
        self.path = path

    def write(self, **record):
        row = {k: record.get(k) for k in self.FIELDS}
        self._f.write(json.dumps(row) + "\n")

    def flush(self):
        self._f.flush()

    def close(self):
        self._f.flush()
        self._f.close()


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "synthetic":
        return gaussian_mixture(
            cfg.synthetic_n, cfg.synthetic_dim, cfg.synthetic_classes,
            seed=cfg.synthetic_seed, spread=cfg.synthetic_spread,
        )
    if cfg.dataset == "csv":
        return load_csv(cfg.data_path)
    images_path, labels_path = (p.strip() for p in cfg.data_path.split(","))
    return load_idx_dataset(images_path, labels_path)


def evaluate(params: dict, ds: Dataset):
    """(mean CE loss, accuracy) on hard labels, without recording a graph."""
    with no_grad():
        z = mlp_forward(params, Tensor(ds.flat_inputs()))
    y = one_hot(ds.labels, ds.num_classes)
    loss = float(ce_loss(z, Tensor(y)))
    acc = float(np.mean(np.argmax(z.data, axis=1) == ds.labels))
    return loss, acc


def train_teacher(cfg: ExperimentConfig, metrics: MetricsWriter = None,
                  dataset: Dataset = None):
    """Cross-entropy training with the configured augmentation pipeline."""
    ds = dataset if dataset is not None else load_dataset(cfg)
    train_ds, val_ds = split_train_val(ds, cfg.holdout_fraction, cfg.synthetic_seed)
    mcfg = cfg.mlp_config("teacher", train_ds.flat_inputs().shape[1], ds.num_classes)
    params = mlp_init(mcfg, cfg.seed)
    sgd = SGDState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    augment = cfg.augment_config()
    step = 0
    for epoch in range(cfg.epochs):
        sgd.lr = cosine_schedule(
            epoch, cfg.epochs, cfg.warmup_epochs, cfg.lr, cfg.lr_min
        )
        t0 = time.perf_counter()
        epoch_loss = 0.0
        nb = 0
        for batch in iter_batches(train_ds, cfg.batch_size, rng, augment):
            z = mlp_forward(params, Tensor(batch.x))
            loss = ce_loss(z, Tensor(batch.y))
            if not math.isfinite(float(loss)):
                raise FloatingPointError(f"teacher epoch {epoch}: non-finite loss")
            sgd_step(params, grad(loss, params), sgd)
            epoch_loss += float(loss)
            nb += 1
            step += 1
        val_loss, val_acc = evaluate(params, val_ds)
        if metrics is not None:
            wall = (time.perf_counter() - t0) * 1000
            metrics.write(step=step, epoch=epoch, split="train",
                          loss=epoch_loss / max(nb, 1), lr=sgd.lr, wall_ms=wall)
            metrics.write(step=step, epoch=epoch, split="val",
                          loss=val_loss, accuracy=val_acc, lr=sgd.lr, wall_ms=wall)
            metrics.flush()
    return params, mcfg


def save_teacher(path, params, mcfg, cfg: ExperimentConfig):
    arrays = {f"param/{k}": v.data for k, v in params.items()}
    meta = {
        "kind": "teacher",
        "input_dim": mcfg.input_dim,
        "hidden_dims": list(mcfg.hidden_dims),
        "output_dim": mcfg.output_dim,
        "config": cfg.to_dict(),
    }
    save_checkpoint(path, arrays, meta)


def load_teacher(path):
    arrays, meta = load_checkpoint(path)
    params = {
        k.split("/", 1)[1]: Tensor(v)
        for k, v in arrays.items()
        if k.startswith("param/")
    }
    return freeze(params), meta


@dataclass
class DistillRun:
    """Distillation state machine; resumable through run checkpoints."""

    cfg: ExperimentConfig
    teacher: dict
    method: str  # kd | mkd
    tau_s: float = None  # fixed temperatures for kd; default tau_init
    tau_t: float = None
    epoch: int = 0
    step: int = 0
    student: dict = None
    meta: dict = None
    sgd: SGDState = None
    adamw: AdamWState = None
    train_rng: np.random.Generator = None
    val_stream: CyclicValBatches = None
    train_ds: Dataset = None
    val_ds: Dataset = None
    dataset: Dataset = None

    def __post_init__(self):
        cfg = self.cfg
        if self.method not in ("kd", "mkd"):
            raise ConfigError(f"unknown distillation method {self.method!r}")
        ds = self.dataset if self.dataset is not None else load_dataset(cfg)
        self.train_ds, self.val_ds = split_train_val(
            ds, cfg.holdout_fraction, cfg.synthetic_seed
        )
        input_dim = self.train_ds.flat_inputs().shape[1]
        last = max(int(k[1:]) for k in self.teacher if k.startswith("w"))
        zt_dim = self.teacher[f"w{last}"].data.shape[1]
        if zt_dim != ds.num_classes:
            raise ConfigError(
                f"teacher predicts {zt_dim} classes, dataset has {ds.num_classes}"
            )
        if self.tau_s is None:
            self.tau_s = cfg.tau_init
        if self.tau_t is None:
            self.tau_t = cfg.tau_init
        if self.student is None:
            mcfg = cfg.mlp_config("student", input_dim, ds.num_classes)
            self.student = mlp_init(mcfg, cfg.seed)
        if self.meta is None:
            self.meta = meta_init(cfg.tau_init, cfg.seed + 1)
        if self.sgd is None:
            self.sgd = SGDState(
                lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
            )
        if self.adamw is None:
            self.adamw = AdamWState(
                lr=cfg.meta_lr, beta1=cfg.meta_beta1, beta2=cfg.meta_beta2,
                weight_decay=cfg.meta_weight_decay,
            )
        if self.train_rng is None:
            self.train_rng = np.random.default_rng([cfg.seed, 2])
        if self.val_stream is None:
            self.val_stream = CyclicValBatches(
                self.val_ds, cfg.batch_size, np.random.default_rng([cfg.seed, 3])
            )

    def current_temps(self):
        if self.method == "mkd":
            return tempnet_forward(self.meta, self.cfg.tau_init)
        return fixed_temps(self.tau_s, self.tau_t)

    def run(self, metrics: MetricsWriter = None, until_epoch: int = None):
        cfg = self.cfg
        stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
        while self.epoch < stop:
            epoch = self.epoch
            self.sgd.lr = cosine_schedule(
                epoch, cfg.epochs, cfg.warmup_epochs, cfg.lr, cfg.lr_min
            )
            t0 = time.perf_counter()
            for batch in iter_batches(self.train_ds, cfg.batch_size, self.train_rng):
                # a zero meta learning rate cannot move the temperatures, so
                # skip the meta phase entirely; this makes the run reproduce
                # the fixed-temperature metrics stream bitwise
                if self.method == "mkd" and cfg.meta_active(epoch) and cfg.meta_lr > 0:
                    trace = mkd_step(
                        self.student, self.meta, self.teacher,
                        batch, self.val_stream.next(),
                        self.sgd, self.adamw,
                        tau_init=cfg.tau_init, step=self.step,
                        objective=cfg.meta_objective, grad_mode=cfg.meta_grad,
                        tau_squared=cfg.tau_squared,
                    )
                    loss = trace.train_loss
                    tau_s, tau_t = trace.tau_s, trace.tau_t
                    meta_norm = trace.meta_grad_norm
                else:
                    temps = self.current_temps()
                    loss, _ = kd_student_update(
                        self.student, self.teacher, batch, temps,
                        self.sgd, cfg.tau_squared,
                    )
                    tau_s, tau_t = temps.values()
                    meta_norm = 0.0
                if metrics is not None:
                    metrics.write(
                        step=self.step, epoch=epoch, split="train", loss=loss,
                        tau_s=tau_s, tau_t=tau_t, lr=self.sgd.lr,
                        meta_grad_norm=meta_norm,
                        wall_ms=(time.perf_counter() - t0) * 1000,
                    )
                self.step += 1
            val_loss, val_acc = evaluate(self.student, self.val_ds)
            if metrics is not None:
                metrics.write(
                    step=self.step, epoch=epoch, split="val", loss=val_loss,
                    accuracy=val_acc, lr=self.sgd.lr,
                    wall_ms=(time.perf_counter() - t0) * 1000,
                )
                metrics.flush()
            self.epoch += 1
        return self

    # --- run checkpointing -------------------------------------------------

    def save(self, path):
        arrays = {}
        for k, v in self.student.items():
            arrays[f"student/{k}"] = v.data
        for k, v in self.meta.items():
            arrays[f"meta/{k}"] = v.data
        for k, v in self.sgd.velocity.items():
            arrays[f"sgd/velocity/{k}"] = v
        for k, v in self.adamw.m.items():
            arrays[f"adamw/m/{k}"] = v
        for k, v in self.adamw.v.items():
            arrays[f"adamw/v/{k}"] = v
        meta = {
            "kind": "distill",
            "method": self.method,
            "tau_s": self.tau_s,
            "tau_t": self.tau_t,
            "epoch": self.epoch,
            "step": self.step,
            "adamw_t": self.adamw.t,
            "train_rng": _rng_state(self.train_rng),
            "val_rng": _rng_state(self.val_stream.rng),
            "config": self.cfg.to_dict(),
        }
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path, cfg: ExperimentConfig, teacher: dict):
        arrays, meta = load_checkpoint(path)

        def group(prefix, requires_grad):
            return {
                k[len(prefix):]: Tensor(v, requires_grad=requires_grad)
                for k, v in arrays.items() if k.startswith(prefix)
            }

        run = cls(
            cfg=cfg, teacher=teacher, method=meta["method"],
            tau_s=meta["tau_s"], tau_t=meta["tau_t"],
            epoch=meta["epoch"], step=meta["step"],
            student=group("student/", True), meta=group("meta/", True),
        )
        run.sgd.velocity = {
            k[len("sgd/velocity/"):]: v.copy()
            for k, v in arrays.items() if k.startswith("sgd/velocity/")
        }
        run.adamw.m = {
            k[len("adamw/m/"):]: v.copy()
            for k, v in arrays.items() if k.startswith("adamw/m/")
        }
        run.adamw.v = {
            k[len("adamw/v/"):]: v.copy()
            for k, v in arrays.items() if k.startswith("adamw/v/")
        }
        run.adamw.t = meta["adamw_t"]
        _set_rng_state(run.train_rng, meta["train_rng"])
        _set_rng_state(run.val_stream.rng, meta["val_rng"])
        run.val_stream._it = iter(())
        return run


def _rng_state(rng):
    return json.loads(json.dumps(rng.bit_generator.state))


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


def distill(cfg: ExperimentConfig, teacher: dict, method: str,
            metrics: MetricsWriter = None, tau_s=None, tau_t=None,
            dataset: Dataset = None) -> DistillRun:
    run = DistillRun(cfg=cfg, teacher=teacher, method=method,
                     tau_s=tau_s, tau_t=tau_t, dataset=dataset)
    return run.run(metrics)


def grid_search(cfg: ExperimentConfig, teacher: dict,
                tau_s_list, tau_t_list=None, threads: int = None,
                dataset: Dataset = None):
    """Final validation accuracy per fixed-temperature cell.

    With only one list given, runs the shared-temperature sweep (tau_s ==
    tau_t). Returns (cells, accuracies, argmax cell) where cells is a list of
    (tau_s, tau_t) pairs in row-major order.
    """
    for tau in list(tau_s_list) + list(tau_t_list or []):
        if tau <= 0:
            raise ConfigError(f"grid temperatures must be positive, got {tau}")
    if not tau_s_list:
        raise ConfigError("grid search needs at least one temperature")
    if tau_t_list is None:
        cells = [(t, t) for t in tau_s_list]
    else:
        cells = [(ts, tt) for ts in tau_s_list for tt in tau_t_list]

    if threads is None:
        threads = int(os.environ.get("MKD_THREADS", "1"))
    threads = max(1, min(threads, len(cells)))

    def run_cell(cell):
        ts, tt = cell
        run = distill(cfg, teacher, "kd", tau_s=ts, tau_t=tt, dataset=dataset)
        _, acc = evaluate(run.student, run.val_ds)
        return acc

    if threads == 1:
        accs = [run_cell(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            accs = list(pool.map(run_cell, cells))
    best = cells[int(np.argmax(accs))]
    return cells, accs, best
