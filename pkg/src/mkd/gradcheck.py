"""Self-check suite comparing reverse-mode gradients against independent
finite-difference and closed-form oracles. Used by the `gradcheck` CLI
command and the acceptance tests."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor, finite_difference_grad, grad
from .losses import ce_loss, kd_loss, meta_loss, one_hot
from .models import MLPConfig, meta_init, mlp_init, mlp_forward, tempnet_forward
from .optim import lookahead_meta_grad, lookahead_meta_grad_fd, make_kd_train_loss, make_meta_val_loss
from .data import Batch

FD_H = 1e-6
FIRST_ORDER_TOL = 1e-5
SECOND_ORDER_TOL = 1e-8
TOY_META_TOL = 1e-10
META_XCHECK_REL_TOL = 1e-3
META_XCHECK_COS_TOL = 0.999


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _default_ops():
    return {
        "matmul": ag.matmul,
        "add": ag.add,
        "sub": ag.sub,
        "mul": ag.mul,
        "div": ag.div,
        "relu": ag.relu,
        "sigmoid": ag.sigmoid,
        "exp": ag.exp,
        "log": ag.log,
        "sum": ag.tsum,
        "mean": ag.tmean,
        "max_along_axis": ag.max_along_axis,
        "reshape": ag.reshape,
        "broadcast": ag.broadcast_to,
        "concat": ag.concat,
        "softmax_stable": ag.softmax_stable,
    }


def _op_scalar_fn(name, op, rng):
    """Build (params, scalar function) exercising one primitive."""
    a = rng.uniform(-2, 2, size=(3, 4))
    b = rng.uniform(-2, 2, size=(3, 4))
    if name in ("relu", "max_along_axis"):
        # keep clear of the kink so the fd oracle is valid
        a = np.where(np.abs(a) < 0.05, a + 0.1, a)
    if name == "log":
        a = np.abs(a) + 0.1
    if name == "exp":
        a = np.clip(a, -2, 2)
    params = {"a": Tensor(a, requires_grad=True)}
    weights = Tensor(rng.uniform(-1, 1, size=(3, 4)))

    if name == "matmul":
        b2 = Tensor(rng.uniform(-2, 2, size=(4, 5)), requires_grad=True)
        params["b"] = b2
        w_mm = Tensor(rng.uniform(-1, 1, size=(3, 5)))
        return params, lambda p: ag.tsum(ag.mul(ag.matmul(p["a"], p["b"]), w_mm))
    if name in ("add", "sub", "mul", "div"):
        bt = Tensor(np.abs(b) + 0.5 if name == "div" else b, requires_grad=True)
        params["b"] = bt
        return params, lambda p: ag.tsum(ag.mul(op(p["a"], p["b"]), weights))
    if name == "sum":
        return params, lambda p: op(p["a"])
    if name == "mean":
        return params, lambda p: ag.tsum(ag.mul(op(p["a"], 1, True), weights))
    if name == "max_along_axis":
        return params, lambda p: ag.tsum(op(p["a"], 1))
    if name == "reshape":
        return params, lambda p: ag.tsum(ag.mul(op(p["a"], (4, 3)), Tensor(weights.data.reshape(4, 3))))
    if name == "broadcast":
        params = {"a": Tensor(a[0], requires_grad=True)}
        return params, lambda p: ag.tsum(ag.mul(op(p["a"], (3, 4)), weights))
    if name == "concat":
        bt = Tensor(b, requires_grad=True)
        params["b"] = bt
        w2 = Tensor(rng.uniform(-1, 1, size=(6, 4)))
        return params, lambda p: ag.tsum(ag.mul(op([p["a"], p["b"]], 0), w2))
    # unary elementwise: relu, sigmoid, exp, log, softmax_stable
    return params, lambda p: ag.tsum(ag.mul(op(p["a"]), weights))


def check_primitives(trials: int = 10, seed: int = 0, ops: dict = None):
    """Max relative error per primitive vs the central-difference oracle."""
    ops = ops or _default_ops()
    report = {}
    for op_idx, (name, op) in enumerate(ops.items()):
        worst = 0.0
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial, op_idx])
            params, f = _op_scalar_fn(name, op, rng)
            analytic = grad(f(params), params)
            fd = finite_difference_grad(f, params, FD_H)
            for k in params:
                worst = max(worst, rel_error(analytic[k].data, fd[k]))
        report[name] = worst
    return report


def check_mlp_backward(trials: int = 5, seed: int = 0):
    """Random 2-layer MLP scalar losses against finite differences."""
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        cfg = MLPConfig(input_dim=4, hidden_dims=(6,), output_dim=3)
        params = mlp_init(cfg, int(rng.integers(1 << 31)))
        for p in params.values():
            p.data += rng.uniform(-0.2, 0.2, size=p.data.shape)
        x = Tensor(rng.uniform(-2, 2, size=(5, 4)))
        y = Tensor(one_hot(rng.integers(0, 3, size=5), 3))

        def f(p):
            return ce_loss(mlp_forward(p, x), y)

        analytic = grad(f(params), params)
        fd = finite_difference_grad(f, params, FD_H)
        for k in params:
            worst = max(worst, rel_error(analytic[k].data, fd[k]))
    return worst


def check_loss_grads(trials: int = 5, seed: int = 0):
    """kd/ce/meta loss gradients (incl. temperatures) vs finite differences."""
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial, 7])
        z_s = Tensor(rng.uniform(-2, 2, size=(6, 5)), requires_grad=True)
        z_t = Tensor(rng.uniform(-2, 2, size=(6, 5)))
        tau_s = Tensor(rng.uniform(0.75, 4.0), requires_grad=True)
        tau_t = Tensor(rng.uniform(0.75, 4.0), requires_grad=True)
        params = {"z_s": z_s, "tau_s": tau_s, "tau_t": tau_t}

        def f_kd(p):
            return kd_loss(p["z_s"], z_t, (p["tau_s"], p["tau_t"]))

        analytic = grad(f_kd(params), params)
        fd = finite_difference_grad(f_kd, params, FD_H)
        for k in params:
            worst = max(worst, rel_error(analytic[k].data, fd[k]))

        y = Tensor(one_hot(rng.integers(0, 5, size=6), 5))
        zp = {"z": Tensor(rng.uniform(-2, 2, size=(6, 5)), requires_grad=True)}

        def f_ce(p):
            return ce_loss(p["z"], y)

        analytic = grad(f_ce(zp), zp)
        fd = finite_difference_grad(f_ce, zp, FD_H)
        worst = max(worst, rel_error(analytic["z"].data, fd["z"]))

        def f_meta(p):
            return meta_loss(ag.softmax_stable(p["z"], axis=1), y)

        analytic = grad(f_meta(zp), zp)
        fd = finite_difference_grad(f_meta, zp, FD_H)
        worst = max(worst, rel_error(analytic["z"].data, fd["z"]))
    return worst


def check_second_order():
    """Double backward on polynomials vs analytic second derivatives."""
    worst = 0.0
    for x0, want in ((2.0, 12.0), (-1.5, -9.0), (0.5, 3.0)):
        x = Tensor(x0, requires_grad=True)
        y = ag.mul(ag.mul(x, x), x)  # x^3, d2/dx2 = 6x
        (g,) = grad(y, [x], create_graph=True)
        (g2,) = grad(g, [x])
        worst = max(worst, abs(float(g2) - want))
    # mixed polynomial: f = a^2 b + b^3
    a = Tensor(1.3, requires_grad=True)
    b = Tensor(-0.7, requires_grad=True)
    f = ag.mul(ag.mul(a, a), b) + ag.mul(ag.mul(b, b), b)
    ga, gb = grad(f, [a, b], create_graph=True)
    (gab,) = grad(ga, [b])  # d2f/dadb = 2a
    worst = max(worst, abs(float(gab) - 2 * 1.3))
    (gbb,) = grad(gb, [b])  # d2f/db2 = 6b
    worst = max(worst, abs(float(gbb) - 6 * -0.7))
    return worst


def toy_meta_gradient():
    """Scalar one-step-lookahead system with a closed-form meta gradient.

    L_t = (theta - phi)^2 / 2, L_v = theta'^2 / 2, alpha = 0.1; at theta=1,
    phi=0 the exact meta gradient is theta' * alpha = 0.09.
    """
    theta = {"x": Tensor(1.0, requires_grad=True)}
    phi = {"p": Tensor(0.0, requires_grad=True)}

    def train_fn(th, ph):
        d = th["x"] - ph["p"]
        return ag.scalar_mul(ag.mul(d, d), 0.5)

    def val_fn(th):
        return ag.scalar_mul(ag.mul(th["x"], th["x"]), 0.5)

    exact, _, _ = lookahead_meta_grad(train_fn, val_fn, theta, phi, alpha=0.1)
    approx, _, _ = lookahead_meta_grad_fd(train_fn, val_fn, theta, phi, alpha=0.1)
    return float(exact["p"]), float(approx["p"])


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    cfg = MLPConfig(input_dim=5, hidden_dims=(8,), output_dim=4)
    student = mlp_init(cfg, seed)
    for p in student.values():
        p.data += rng.uniform(-0.3, 0.3, size=p.data.shape)
    teacher = mlp_init(cfg, seed + 1000)
    for p in teacher.values():
        p.data += rng.uniform(-0.5, 0.5, size=p.data.shape)
        p.requires_grad = False
    meta = meta_init(2.0, seed + 2000)
    # non-trivial head so temperatures respond to the embedding
    meta["w2"].data += rng.uniform(-0.5, 0.5, size=meta["w2"].data.shape)
    meta["b2"].data += rng.uniform(-0.2, 0.2, size=meta["b2"].data.shape)
    x_tr = rng.uniform(-2, 2, size=(8, 5))
    x_va = rng.uniform(-2, 2, size=(8, 5))
    y_va = one_hot(rng.integers(0, 4, size=8), 4)
    train_batch = Batch(x=x_tr, y=one_hot(rng.integers(0, 4, size=8), 4),
                        raw_labels=np.zeros(8, dtype=np.int64))
    val_batch = Batch(x=x_va, y=y_va, raw_labels=np.argmax(y_va, axis=1))
    return student, meta, teacher, train_batch, val_batch


def check_meta_grad_agreement(instances: int = 20, seed: int = 0,
                              objective: str = "ce"):
    """meta_grad_exact vs meta_grad_fd: worst relative L2 error and cosine."""
    worst_rel = 0.0
    worst_cos = 1.0
    for i in range(instances):
        student, meta, teacher, tb, vb = _random_instance(seed * 1000 + i)
        train_fn = make_kd_train_loss(teacher, tb.x, tau_init=2.0)
        val_fn = make_meta_val_loss(vb.x, vb.y, objective)
        exact, _, _ = lookahead_meta_grad(train_fn, val_fn, student, meta, alpha=0.05)
        approx, _, _ = lookahead_meta_grad_fd(
            train_fn, val_fn, student, meta, alpha=0.05
        )
        e = np.concatenate([exact[k].data.ravel() for k in sorted(exact)])
        a = np.concatenate([approx[k].data.ravel() for k in sorted(approx)])
        norm = np.linalg.norm(e)
        if norm == 0:
            continue
        worst_rel = max(worst_rel, float(np.linalg.norm(e - a) / norm))
        worst_cos = min(
            worst_cos,
            float(e @ a / (np.linalg.norm(e) * np.linalg.norm(a))),
        )
    return worst_rel, worst_cos


def run_all(ops: dict = None, primitive_trials: int = 10,
            meta_instances: int = 5):
    """Full suite; returns (report dict, ok flag)."""
    report = {}
    prim = check_primitives(trials=primitive_trials, ops=ops)
    report["primitives"] = prim
    report["mlp_backward"] = check_mlp_backward()
    report["loss_grads"] = check_loss_grads()
    report["second_order"] = check_second_order()
    toy_exact, toy_fd = toy_meta_gradient()
    report["toy_meta_exact"] = toy_exact
    report["toy_meta_fd"] = toy_fd
    rel, cos = check_meta_grad_agreement(instances=meta_instances)
    report["meta_rel_l2"] = rel
    report["meta_cosine"] = cos

    failures = []
    for name, err in prim.items():
        if err > FIRST_ORDER_TOL:
            failures.append(f"primitive {name}: rel error {err:.3e}")
    if report["mlp_backward"] > FIRST_ORDER_TOL:
        failures.append(f"mlp backward: rel error {report['mlp_backward']:.3e}")
    if report["loss_grads"] > FIRST_ORDER_TOL:
        failures.append(f"loss grads: rel error {report['loss_grads']:.3e}")
    if report["second_order"] > SECOND_ORDER_TOL:
        failures.append(f"second order: abs error {report['second_order']:.3e}")
    if abs(toy_exact - 0.09) > TOY_META_TOL:
        failures.append(f"toy meta gradient: {toy_exact!r} != 0.09")
    if abs(toy_fd - 0.09) > 1e-6:
        failures.append(f"toy meta gradient (fd): {toy_fd!r} != 0.09")
    if rel > META_XCHECK_REL_TOL:
        failures.append(f"meta exact-vs-fd rel L2: {rel:.3e}")
    if cos < META_XCHECK_COS_TOL:
        failures.append(f"meta exact-vs-fd cosine: {cos:.6f}")
    report["failures"] = failures
    return report, not failures
