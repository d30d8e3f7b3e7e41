import json

import numpy as np
import pytest

from mkd.config import ConfigError, ExperimentConfig
from mkd.data import gaussian_mixture
from mkd.train import (
    DistillRun,
    MetricsWriter,
    distill,
    evaluate,
    grid_search,
    load_dataset,
    load_teacher,
    save_teacher,
    train_teacher,
)


def _cfg(**kw):
    base = dict(
        dataset="synthetic",
        synthetic_n=600,
        synthetic_dim=6,
        synthetic_classes=3,
        synthetic_spread=0.8,
        teacher_hidden=(16,),
        student_hidden=(8,),
        epochs=3,
        batch_size=64,
        lr=0.05,
        tau_init=2.0,
        meta_lr=1e-4,
        seed=0,
    )
    base.update(kw)
    return ExperimentConfig(**base).validate()


@pytest.fixture(scope="module")
def teacher_and_cfg():
    cfg = _cfg()
    params, mcfg = train_teacher(cfg)
    return cfg, params, mcfg


def test_load_dataset_synthetic_matches_generator():
    cfg = _cfg()
    ds = load_dataset(cfg)
    ref = gaussian_mixture(600, 6, 3, seed=0, spread=0.8)
    np.testing.assert_array_equal(ds.images, ref.images)


def test_teacher_learns_better_than_chance(teacher_and_cfg):
    cfg, params, _ = teacher_and_cfg
    ds = load_dataset(cfg)
    _, acc = evaluate(params, ds)
    assert acc > 2.0 / cfg.synthetic_classes


def test_teacher_training_deterministic():
    cfg = _cfg(epochs=1)
    p1, _ = train_teacher(cfg)
    p2, _ = train_teacher(cfg)
    for k in p1:
        np.testing.assert_array_equal(p1[k].data, p2[k].data)


def test_teacher_save_load_round_trip(tmp_path, teacher_and_cfg):
    cfg, params, mcfg = teacher_and_cfg
    path = str(tmp_path / "teacher.bin")
    save_teacher(path, params, mcfg, cfg)
    loaded, meta = load_teacher(path)
    assert meta["kind"] == "teacher"
    assert meta["hidden_dims"] == [16]
    for k in params:
        np.testing.assert_array_equal(loaded[k].data, params[k].data)
        assert not loaded[k].requires_grad


def test_distill_kd_runs_and_improves(teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    run = distill(cfg, teacher, "kd")
    _, acc = evaluate(run.student, run.val_ds)
    assert acc > 1.5 / cfg.synthetic_classes


def test_zero_meta_lr_mkd_bitwise_equals_fixed_kd(teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    frozen = _cfg(meta_lr=0.0, epochs=2)
    mkd_run = distill(frozen, teacher, "mkd")
    kd_run = distill(frozen, teacher, "kd")  # tau defaults to tau_init
    for k in mkd_run.student:
        np.testing.assert_array_equal(
            mkd_run.student[k].data, kd_run.student[k].data
        )
    assert mkd_run.current_temps().values() == (2.0, 2.0)


def test_mkd_moves_temperatures(teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    run = distill(_cfg(meta_lr=1e-3, epochs=1), teacher, "mkd")
    ts, tt = run.current_temps().values()
    assert (ts, tt) != (2.0, 2.0)
    assert 1.5 < ts < 2.5 and 1.5 < tt < 2.5


def test_checkpoint_resume_bitwise(tmp_path, teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    cfg3 = _cfg(meta_lr=1e-3, epochs=3)

    full = DistillRun(cfg=cfg3, teacher=teacher, method="mkd").run()

    half = DistillRun(cfg=cfg3, teacher=teacher, method="mkd")
    half.run(until_epoch=1)
    path = str(tmp_path / "run.bin")
    half.save(path)
    resumed = DistillRun.load(path, cfg3, teacher).run()

    assert resumed.step == full.step and resumed.epoch == full.epoch
    for k in full.student:
        np.testing.assert_array_equal(resumed.student[k].data, full.student[k].data)
    for k in full.meta:
        np.testing.assert_array_equal(resumed.meta[k].data, full.meta[k].data)


def test_metrics_deterministic_modulo_wall_time(tmp_path, teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    rows = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.jsonl"
        m = MetricsWriter(str(path))
        distill(_cfg(epochs=1, meta_lr=1e-3), teacher, "mkd", metrics=m)
        m.close()
        with open(path) as f:
            recs = [json.loads(line) for line in f]
        for r in recs:
            r.pop("wall_ms")
        rows.append(recs)
    assert rows[0] == rows[1]


def test_metrics_writer_fields(tmp_path):
    m = MetricsWriter(str(tmp_path / "m.jsonl"))
    m.write(step=1, loss=0.5, extra="dropped")
    m.close()
    rec = json.loads(open(m.path).read())
    assert set(rec) == set(MetricsWriter.FIELDS)
    assert rec["step"] == 1 and rec["loss"] == 0.5 and rec["tau_s"] is None


def test_grid_search_shared_and_explicit_consistent(teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    fast = _cfg(epochs=1)
    taus = [1.0, 2.0]
    cells_shared, accs_shared, best = grid_search(fast, teacher, taus)
    assert cells_shared == [(1.0, 1.0), (2.0, 2.0)]
    cells_full, accs_full, _ = grid_search(fast, teacher, taus, taus)
    diag = {c: a for c, a in zip(cells_full, accs_full)}
    for cell, acc in zip(cells_shared, accs_shared):
        assert diag[cell] == acc
    assert best in cells_shared


def test_grid_search_threaded_matches_serial(teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    fast = _cfg(epochs=1)
    taus = [1.0, 2.0, 3.0]
    _, serial, _ = grid_search(fast, teacher, taus, threads=1)
    _, threaded, _ = grid_search(fast, teacher, taus, threads=3)
    assert serial == threaded


def test_grid_search_rejects_bad_temperatures(teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    with pytest.raises(ConfigError):
        grid_search(cfg, teacher, [1.0, -2.0])
    with pytest.raises(ConfigError):
        grid_search(cfg, teacher, [])


def test_class_count_mismatch_rejected(teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    bad = _cfg(synthetic_classes=5)
    with pytest.raises(ConfigError, match="classes"):
        DistillRun(cfg=bad, teacher=teacher, method="kd")


def test_unknown_method_rejected(teacher_and_cfg):
    cfg, teacher, _ = teacher_and_cfg
    with pytest.raises(ConfigError, match="method"):
        DistillRun(cfg=cfg, teacher=teacher, method="hint")
