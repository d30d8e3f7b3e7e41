import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from mkd import gradcheck as gc
from mkd.autograd import Tensor, primitive_forward, relu
from mkd.cli import DEFAULT_TAU_GRID, _parse_tau_list, main
from mkd.checkpoint import load_checkpoint


CFG_TEXT = """
[data]
dataset = synthetic
synthetic_n = 400
synthetic_dim = 5
synthetic_classes = 3
synthetic_spread = 0.8

[model]
teacher_hidden = 16
student_hidden = 8

[meta]
tau_init = 2.0
lr = 0.0005

[run]
epochs = 2
batch_size = 64
seed = 0
"""


@pytest.fixture()
def workspace(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text(CFG_TEXT)
    return tmp_path, str(cfg)


def _run(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def test_parse_tau_list():
    assert _parse_tau_list("1, 2 3") == [1.0, 2.0, 3.0]
    assert _parse_tau_list(None) is None
    with pytest.raises(Exception):
        _parse_tau_list("a,b")
    with pytest.raises(Exception):
        _parse_tau_list(", ,")


def test_train_teacher_then_distill_and_grid(workspace):
    tmp_path, cfg = workspace
    out = str(tmp_path / "run")

    res = _run(["train-teacher", "--config", cfg, "--out", out])
    assert res.exit_code == 0, res.output
    teacher = os.path.join(out, "teacher.ckpt")
    assert os.path.exists(teacher)
    assert os.path.exists(os.path.join(out, "teacher_metrics.jsonl"))
    _, meta = load_checkpoint(teacher)
    assert meta["kind"] == "teacher"

    res = _run(["distill", "--config", cfg, "--teacher", teacher,
                "--method", "mkd", "--out", out])
    assert res.exit_code == 0, res.output
    student = os.path.join(out, "mkd_student.ckpt")
    assert os.path.exists(student)
    with open(os.path.join(out, "mkd_metrics.jsonl")) as f:
        records = [json.loads(line) for line in f]
    assert any(r["split"] == "val" and r["accuracy"] is not None for r in records)
    train_recs = [r for r in records if r["split"] == "train"]
    assert all(1.5 < r["tau_s"] < 2.5 for r in train_recs)

    res = _run(["grid-search", "--config", cfg, "--teacher", teacher,
                "--tau-s", "1,2", "--out", out])
    assert res.exit_code == 0, res.output
    with open(os.path.join(out, "grid_search.json")) as f:
        table = json.load(f)
    assert [c["tau_s"] for c in table["cells"]] == [1.0, 2.0]
    assert table["best"]["tau_s"] in (1.0, 2.0)
    assert "best cell" in res.output


def test_distill_kd_method(workspace):
    tmp_path, cfg = workspace
    out = str(tmp_path / "run")
    _run(["train-teacher", "--config", cfg, "--out", out])
    teacher = os.path.join(out, "teacher.ckpt")
    res = _run(["distill", "--config", cfg, "--teacher", teacher,
                "--method", "kd", "--out", out])
    assert res.exit_code == 0, res.output
    assert os.path.exists(os.path.join(out, "kd_student.ckpt"))


def test_missing_config_fails(tmp_path):
    res = CliRunner().invoke(main, ["train-teacher", "--config",
                                    str(tmp_path / "nope.ini")])
    assert res.exit_code != 0


def test_default_tau_grid_values():
    assert DEFAULT_TAU_GRID == (0.75, 1, 2, 3, 4, 6, 9)


def test_gradcheck_command_passes():
    res = CliRunner().invoke(main, ["gradcheck"])
    assert res.exit_code == 0, res.output
    assert "all gradient checks passed" in res.output
    assert "closed form 0.09" in res.output


def test_gradcheck_detects_broken_gradient():
    # fault injection: an op whose forward is relu but whose recorded
    # backward comes from identity must trip the finite-difference check
    def broken_relu(a):
        out = a + Tensor(np.zeros_like(a.data))
        out.data = np.maximum(out.data, 0.0)
        return out

    report = gc.check_primitives(trials=3, ops={"relu": broken_relu})
    assert report["relu"] > gc.FIRST_ORDER_TOL

    full, ok = gc.run_all(ops={"relu": broken_relu}, primitive_trials=2,
                          meta_instances=1)
    assert not ok
    assert any("relu" in f for f in full["failures"])


def test_primitive_forward_covers_default_ops():
    out = primitive_forward("relu", [Tensor([-1.0, 2.0])])
    np.testing.assert_array_equal(out.data, relu(Tensor([-1.0, 2.0])).data)
