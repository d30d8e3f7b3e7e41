"""Command-line surface: teacher training, distillation, temperature grid
search, and the gradient self-check suite."""

from __future__ import annotations

import json
import os
import sys

import click

from . import gradcheck as gc
from .config import ConfigError, load_config
from .train import (
    MetricsWriter,
    distill,
    grid_search,
    load_teacher,
    save_teacher,
    train_teacher,
)

DEFAULT_TAU_GRID = (0.75, 1, 2, 3, 4, 6, 9)


def _parse_tau_list(raw):
    if raw is None:
        return None
    try:
        values = [float(v) for v in raw.replace(",", " ").split() if v]
    except ValueError:
        raise click.BadParameter(f"cannot parse temperature list {raw!r}")
    if not values:
        raise click.BadParameter("empty temperature list")
    return values


def _apply_overrides(cfg, seed, out):
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out_dir = out
    return cfg.validate()


@click.group()
def main():
    """Meta knowledge distillation experiments."""


@main.command("train-teacher")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def cmd_train_teacher(config_path, seed, out):
    """Train a teacher MLP with the configured augmentations."""
    cfg = _apply_overrides(load_config(config_path), seed, out)
    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics = MetricsWriter(os.path.join(cfg.out_dir, "teacher_metrics.jsonl"))
    try:
        params, mcfg = train_teacher(cfg, metrics)
    finally:
        metrics.close()
    ckpt = os.path.join(cfg.out_dir, "teacher.ckpt")
    save_teacher(ckpt, params, mcfg, cfg)
    click.echo(f"teacher checkpoint written to {ckpt}")


@main.command("distill")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--method", type=click.Choice(["kd", "mkd"]), default="mkd")
@click.option("--teacher", "teacher_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--meta-objective", type=click.Choice(["eq8", "ce"]), default=None)
@click.option("--meta-grad", type=click.Choice(["exact", "fd"]), default=None)
def cmd_distill(config_path, method, teacher_path, seed, out,
                meta_objective, meta_grad):
    """Distill a student from a trained teacher (fixed-tau KD or MKD)."""
    cfg = load_config(config_path)
    if meta_objective is not None:
        cfg.meta_objective = meta_objective
    if meta_grad is not None:
        cfg.meta_grad = meta_grad
    _apply_overrides(cfg, seed, out)
    teacher, tmeta = load_teacher(teacher_path)
    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics = MetricsWriter(os.path.join(cfg.out_dir, f"{method}_metrics.jsonl"))
    try:
        run = distill(cfg, teacher, method, metrics)
    finally:
        metrics.close()
    ckpt = os.path.join(cfg.out_dir, f"{method}_student.ckpt")
    run.save(ckpt)
    click.echo(f"student checkpoint written to {ckpt}")


@main.command("grid-search")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--teacher", "teacher_path", required=True, type=click.Path())
@click.option("--tau-s", "tau_s_raw", default=None,
              help="temperature list, e.g. '0.75,1,2,3,4,6,9'")
@click.option("--tau-t", "tau_t_raw", default=None,
              help="teacher temperatures; omit for the shared-tau sweep")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def cmd_grid_search(config_path, teacher_path, tau_s_raw, tau_t_raw, seed, out):
    """Sweep fixed temperatures and report final validation accuracies."""
    cfg = _apply_overrides(load_config(config_path), seed, out)
    teacher, _ = load_teacher(teacher_path)
    tau_s = _parse_tau_list(tau_s_raw) or list(DEFAULT_TAU_GRID)
    tau_t = _parse_tau_list(tau_t_raw)
    try:
        cells, accs, best = grid_search(cfg, teacher, tau_s, tau_t)
    except ConfigError as e:
        raise click.ClickException(str(e))
    os.makedirs(cfg.out_dir, exist_ok=True)
    table_path = os.path.join(cfg.out_dir, "grid_search.json")
    result = {
        "cells": [{"tau_s": ts, "tau_t": tt, "val_accuracy": acc}
                  for (ts, tt), acc in zip(cells, accs)],
        "best": {"tau_s": best[0], "tau_t": best[1]},
    }
    with open(table_path, "w") as f:
        json.dump(result, f, indent=2)
    for (ts, tt), acc in zip(cells, accs):
        click.echo(f"tau_s={ts:g} tau_t={tt:g} val_acc={acc:.4f}")
    click.echo(f"best cell: tau_s={best[0]:g} tau_t={best[1]:g}")
    click.echo(f"table written to {table_path}")


@main.command("gradcheck")
def cmd_gradcheck():
    """Run the finite-difference and meta-gradient self-check suite."""
    report, ok = gc.run_all()
    for name, err in report["primitives"].items():
        click.echo(f"primitive {name:16s} max rel error {err:.3e}")
    click.echo(f"mlp backward        max rel error {report['mlp_backward']:.3e}")
    click.echo(f"loss gradients      max rel error {report['loss_grads']:.3e}")
    click.echo(f"second order        max abs error {report['second_order']:.3e}")
    click.echo(f"toy meta gradient   exact={report['toy_meta_exact']:.12f} "
               f"fd={report['toy_meta_fd']:.12f} (closed form 0.09)")
    click.echo(f"meta exact-vs-fd    rel L2 {report['meta_rel_l2']:.3e} "
               f"cosine {report['meta_cosine']:.6f}")
    if not ok:
        for failure in report["failures"]:
            click.echo(f"FAIL: {failure}", err=True)
        sys.exit(1)
    click.echo("all gradient checks passed")


if __name__ == "__main__":
    main()
