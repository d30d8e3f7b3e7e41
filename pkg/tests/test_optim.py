import numpy as np
import pytest

from mkd.autograd import Tensor, GradError, scalar_mul, mul
from mkd.data import Batch
from mkd.gradcheck import _random_instance
from mkd.losses import one_hot
from mkd.models import meta_init, tempnet_forward
from mkd.optim import (
    AdamWState,
    ConfigError,
    SGDState,
    adamw_step,
    cosine_schedule,
    fixed_temps,
    lookahead_meta_grad,
    lookahead_meta_grad_fd,
    meta_grad_exact,
    meta_grad_fd,
    mkd_step,
    sgd_step,
)


def _p(value):
    return {"p": Tensor(np.array([float(value)]), requires_grad=True)}


def _g(value):
    return {"p": Tensor(np.array([float(value)]))}


def test_sgd_basic_step():
    params = sgd_step(_p(1.0), _g(1.0), SGDState(lr=0.1))
    assert params["p"].data[0] == pytest.approx(0.9)


def test_sgd_zero_gradient_fixed_point():
    params = _p(2.5)
    state = SGDState(lr=0.1, momentum=0.9)
    for _ in range(5):
        sgd_step(params, _g(0.0), state)
    assert params["p"].data[0] == 2.5


def test_sgd_momentum_hand_iteration():
    params = _p(0.0)
    state = SGDState(lr=0.1, momentum=0.9)
    sgd_step(params, _g(1.0), state)
    sgd_step(params, _g(1.0), state)
    assert params["p"].data[0] == pytest.approx(-0.29)


def test_sgd_missing_gradient_errors():
    with pytest.raises(GradError):
        sgd_step(_p(1.0), {}, SGDState(lr=0.1))


def test_adamw_zero_grad_no_decay_fixed_point():
    params = _p(3.0)
    adamw_step(params, _g(0.0), AdamWState(lr=1e-3))
    assert params["p"].data[0] == 3.0


def test_adamw_first_step_closed_form():
    params = _p(0.0)
    state = AdamWState(lr=1e-3)
    adamw_step(params, _g(1.0), state)
    assert params["p"].data[0] == pytest.approx(-1e-3 / (1 + state.eps), rel=1e-12)


def test_adamw_decoupled_decay():
    params = _p(2.0)
    state = AdamWState(lr=0.1, weight_decay=0.5)
    adamw_step(params, _g(0.0), state)
    assert params["p"].data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_cosine_schedule_endpoints_and_midpoint():
    assert cosine_schedule(5, 100, 5, 1.0, 0.1) == 1.0
    assert cosine_schedule(100, 100, 5, 1.0, 0.1) == pytest.approx(0.1)
    mid = cosine_schedule(int(5 + 95 / 2), 100, 5, 1.0, 0.1)
    assert mid == pytest.approx(0.55, abs=0.02)
    assert cosine_schedule(0, 100, 5, 1.0, 0.1) == 0.0


def test_cosine_schedule_rejects_bad_warmup():
    with pytest.raises(ConfigError):
        cosine_schedule(0, 10, 20, 1.0, 0.1)


def _toy_fns():
    def train_fn(th, ph):
        d = th["x"] - ph["p"]
        return scalar_mul(mul(d, d), 0.5)

    def val_fn(th):
        return scalar_mul(mul(th["x"], th["x"]), 0.5)

    return train_fn, val_fn


def test_toy_meta_gradient_closed_form():
    train_fn, val_fn = _toy_fns()
    theta = {"x": Tensor(1.0, requires_grad=True)}
    phi = {"p": Tensor(0.0, requires_grad=True)}
    g, lt, lv = lookahead_meta_grad(train_fn, val_fn, theta, phi, alpha=0.1)
    assert float(g["p"]) == pytest.approx(0.09, abs=1e-10)
    assert lt == pytest.approx(0.5)
    assert lv == pytest.approx(0.5 * 0.9**2)


def test_toy_meta_gradient_fd_matches():
    train_fn, val_fn = _toy_fns()
    theta = {"x": Tensor(1.0, requires_grad=True)}
    phi = {"p": Tensor(0.0, requires_grad=True)}
    g, _, _ = lookahead_meta_grad_fd(train_fn, val_fn, theta, phi, alpha=0.1)
    assert float(g["p"]) == pytest.approx(0.09, abs=1e-6)


def test_zero_alpha_gives_zero_meta_gradient():
    train_fn, val_fn = _toy_fns()
    theta = {"x": Tensor(1.0, requires_grad=True)}
    phi = {"p": Tensor(0.0, requires_grad=True)}
    g, _, _ = lookahead_meta_grad(train_fn, val_fn, theta, phi, alpha=0.0)
    assert float(g["p"]) == 0.0


def test_fd_with_zero_val_gradient_returns_zeros():
    train_fn, _ = _toy_fns()

    def flat_val(th):
        return scalar_mul(mul(th["x"], Tensor(0.0)), 1.0)

    theta = {"x": Tensor(1.0, requires_grad=True)}
    phi = {"p": Tensor(0.0, requires_grad=True)}
    g, _, _ = lookahead_meta_grad_fd(train_fn, flat_val, theta, phi, alpha=0.1)
    assert float(g["p"]) == 0.0


def test_meta_grad_exact_vs_fd_random_instances():
    from mkd.gradcheck import check_meta_grad_agreement

    rel, cos = check_meta_grad_agreement(instances=5, seed=1)
    assert rel <= 1e-3
    assert cos >= 0.999


def test_meta_grad_rejects_negative_alpha():
    student, meta, teacher, tb, vb = _random_instance(0)
    with pytest.raises(ConfigError):
        meta_grad_exact(student, meta, teacher, tb, vb, alpha=-1.0, tau_init=2.0)


def _mkd_fixture(seed=0):
    student, meta, teacher, tb, vb = _random_instance(seed)
    sgd = SGDState(lr=0.05, momentum=0.9)
    adamw = AdamWState(lr=1e-3)
    return student, meta, teacher, tb, vb, sgd, adamw


def test_mkd_step_trace_and_range():
    student, meta, teacher, tb, vb, sgd, adamw = _mkd_fixture()
    trace = mkd_step(student, meta, teacher, tb, vb, sgd, adamw,
                     tau_init=2.0, step=0)
    assert 1.5 < trace.tau_s < 2.5 and 1.5 < trace.tau_t < 2.5
    assert np.isfinite(trace.train_loss) and np.isfinite(trace.val_loss)
    assert trace.meta_grad_norm > 0.0


def test_mkd_step_zero_meta_lr_reduces_to_kd():
    s1, m1, teacher, tb, vb, sgd1, adamw1 = _mkd_fixture(3)
    adamw1.lr = 0.0
    before = {k: v.data.copy() for k, v in m1.items()}
    mkd_step(s1, m1, teacher, tb, vb, sgd1, adamw1, tau_init=2.0, step=0)
    for k in m1:
        np.testing.assert_array_equal(m1[k].data, before[k])

    s2, m2, _, _, _, sgd2, _ = _mkd_fixture(3)
    temps = tempnet_forward(m2, 2.0)
    from mkd.optim import kd_student_update

    kd_student_update(s2, teacher, tb, temps, sgd2)
    for k in s1:
        np.testing.assert_array_equal(s1[k].data, s2[k].data)


def test_mkd_step_perfect_val_batch_zero_meta_gradient():
    student, meta, teacher, tb, vb, sgd, adamw = _mkd_fixture(5)
    adamw.weight_decay = 0.0
    # validation labels equal to the pre-updated student's own predictions
    from mkd.autograd import no_grad
    from mkd.models import mlp_forward

    with no_grad():
        z = mlp_forward(student, Tensor(vb.x))
    vb = Batch(x=vb.x, y=one_hot(np.argmax(z.data, axis=1), z.data.shape[1]),
               raw_labels=np.argmax(z.data, axis=1))
    before = {k: v.data.copy() for k, v in meta.items()}
    # use a tiny alpha so the pre-update cannot flip any prediction
    sgd.lr = 1e-8
    trace = mkd_step(student, meta, teacher, tb, vb, sgd, adamw,
                     tau_init=2.0, step=0, objective="eq8")
    assert trace.meta_grad_norm == 0.0
    for k in meta:
        np.testing.assert_array_equal(meta[k].data, before[k])


def test_mkd_step_uses_original_student_weights_for_final_update():
    # with the temperature net frozen, one mkd step must equal one direct
    # distillation step from the pre-step weights
    s1, m1, teacher, tb, vb, sgd1, adamw1 = _mkd_fixture(7)
    adamw1.lr = 0.0
    s0 = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in s1.items()}
    mkd_step(s1, m1, teacher, tb, vb, sgd1, adamw1, tau_init=2.0, step=0)

    from mkd.optim import kd_student_update

    _, m2, _, _, _, sgd2, _ = _mkd_fixture(7)
    kd_student_update(s0, teacher, tb, tempnet_forward(m2, 2.0), sgd2)
    for k in s1:
        np.testing.assert_array_equal(s1[k].data, s0[k].data)


def test_fixed_temps_match_tempnet_at_init():
    meta = meta_init(2.0, 0)
    net = tempnet_forward(meta, 2.0).values()
    fixed = fixed_temps(2.0, 2.0).values()
    assert net == fixed
