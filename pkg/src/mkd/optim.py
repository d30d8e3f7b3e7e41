"""Optimizers, learning-rate schedule, and the three-phase meta step.

The meta step follows the one-step-lookahead recipe: pre-update the student
with a throwaway plain gradient step, differentiate the validation objective
of the pre-updated student back to the temperature parameters, update those
with AdamW, then re-derive the student gradient from the ORIGINAL weights
under the updated temperatures and apply the student optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import GradError, Tensor, grad, no_grad, softmax_stable
from .losses import ce_loss, kd_loss, meta_loss
from .models import Temperatures, mlp_forward, tempnet_forward


class ConfigError(ValueError):
    pass


@dataclass
class SGDState:
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)


@dataclass
class AdamWState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class MetaStepTrace:
    step: int
    train_loss: float
    val_loss: float
    tau_s: float
    tau_t: float
    student_grad_norm: float
    meta_grad_norm: float


def _grad_data(grads: dict, name: str, param: Tensor) -> np.ndarray:
    if name not in grads:
        raise GradError(f"optimizer: missing gradient for parameter {name!r}")
    g = grads[name]
    return g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)


def sgd_step(params: dict, grads: dict, state: SGDState) -> dict:
    """v <- momentum*v + g + wd*p; p <- p - lr*v (in place)."""
    for name, p in params.items():
        g = _grad_data(grads, name, p)
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        v = state.velocity.get(name)
        v = g if v is None or state.momentum == 0.0 else state.momentum * v + g
        state.velocity[name] = v
        p.data -= state.lr * v
    return params


def adamw_step(params: dict, grads: dict, state: AdamWState) -> dict:
    """Decoupled-weight-decay adaptive-moment update with bias correction."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = _grad_data(grads, name, p)
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def cosine_schedule(step, total_steps, warmup_steps, lr_max, lr_min) -> float:
    """Linear warmup to lr_max, then cosine decay to lr_min."""
    if warmup_steps > total_steps:
        raise ConfigError(
            f"warmup_steps ({warmup_steps}) exceeds total_steps ({total_steps})"
        )
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return lr_max * step / warmup_steps
    if total_steps == warmup_steps:
        return lr_min
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))


def lookahead_meta_grad(train_loss_fn, val_loss_fn, theta: dict, phi: dict, alpha):
    """Exact gradient of the outer objective through one inner gradient step.

    theta' = theta - alpha * dL_t(theta, phi)/dtheta, computed with a
    recorded backward pass so that dL_v(theta')/dphi is exact.
    Returns (phi gradients, train loss value, val loss value).
    """
    loss_t = train_loss_fn(theta, phi)
    g = grad(loss_t, theta, create_graph=True)
    theta_prime = {k: theta[k] - Tensor(alpha) * g[k] for k in theta}
    loss_v = val_loss_fn(theta_prime)
    return grad(loss_v, phi), float(loss_t), float(loss_v)


def lookahead_meta_grad_fd(
    train_loss_fn, val_loss_fn, theta: dict, phi: dict, alpha, fd_eps=None
):
    """First-order approximation of ``lookahead_meta_grad``.

    Perturbs theta symmetrically along v = dL_v(theta')/dtheta' and
    differences the phi-gradient of the training loss:
    grad ~= -alpha * (dphi L_t(theta+eps*v) - dphi L_t(theta-eps*v)) / (2 eps)
    """
    loss_t = train_loss_fn(theta, phi)
    g = grad(loss_t, theta)
    theta_prime = {
        k: Tensor(theta[k].data - alpha * g[k].data, requires_grad=True) for k in theta
    }
    loss_v = val_loss_fn(theta_prime)
    v = grad(loss_v, theta_prime)
    vnorm = math.sqrt(sum(float((t.data**2).sum()) for t in v.values()))
    if vnorm == 0.0:
        zeros = {k: Tensor(np.zeros_like(p.data)) for k, p in phi.items()}
        return zeros, float(loss_t), float(loss_v)
    eps = fd_eps if fd_eps is not None else 0.01 / vnorm

    def phi_grad_at(sign):
        shifted = {
            k: Tensor(theta[k].data + sign * eps * v[k].data, requires_grad=True)
            for k in theta
        }
        return grad(train_loss_fn(shifted, phi), phi)

    gp = phi_grad_at(+1.0)
    gm = phi_grad_at(-1.0)
    out = {
        k: Tensor(-alpha * (gp[k].data - gm[k].data) / (2 * eps)) for k in phi
    }
    return out, float(loss_t), float(loss_v)


def _val_predictions(theta_prime: dict, x_val) -> Tensor:
    return softmax_stable(mlp_forward(theta_prime, x_val), axis=1)


def make_kd_train_loss(teacher_params, x_train, tau_init, tau_squared=False):
    """Training-loss closure: distillation loss at the tempnet temperatures."""
    with no_grad():
        z_t = mlp_forward(teacher_params, x_train)

    def loss_fn(theta, phi):
        temps = tempnet_forward(phi, tau_init)
        z_s = mlp_forward(theta, x_train)
        return kd_loss(z_s, z_t, temps, tau_squared=tau_squared)

    return loss_fn


def make_meta_val_loss(x_val, y_val, objective: str = "eq8"):
    """Validation-objective closure evaluated on the pre-updated student."""
    if objective not in ("eq8", "ce"):
        raise ConfigError(f"unknown meta objective {objective!r}")

    def loss_fn(theta_prime):
        z = mlp_forward(theta_prime, x_val)
        if objective == "ce":
            return ce_loss(z, y_val)
        return meta_loss(softmax_stable(z, axis=1), y_val)

    return loss_fn


def meta_grad_exact(
    student, meta, teacher, train_batch, val_batch, alpha, tau_init,
    objective="eq8", tau_squared=False,
):
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    train_fn = make_kd_train_loss(teacher, train_batch.x, tau_init, tau_squared)
    val_fn = make_meta_val_loss(val_batch.x, val_batch.y, objective)
    return lookahead_meta_grad(train_fn, val_fn, student, meta, alpha)


def meta_grad_fd(
    student, meta, teacher, train_batch, val_batch, alpha, tau_init,
    objective="eq8", tau_squared=False, fd_eps=None,
):
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    train_fn = make_kd_train_loss(teacher, train_batch.x, tau_init, tau_squared)
    val_fn = make_meta_val_loss(val_batch.x, val_batch.y, objective)
    return lookahead_meta_grad_fd(train_fn, val_fn, student, meta, alpha, fd_eps)


def fixed_temps(tau_s: float, tau_t: float) -> Temperatures:
    # 0.5 + (tau - 0.5) mirrors the temperature net's arithmetic at
    # initialization bit for bit, so fixed-temperature runs and meta runs
    # with a frozen net produce identical trajectories
    return Temperatures(
        tau_s=Tensor(0.5 + (tau_s - 0.5)), tau_t=Tensor(0.5 + (tau_t - 0.5))
    )


def kd_student_update(
    student: dict, teacher: dict, batch, temps: Temperatures,
    sgd_state: SGDState, tau_squared: bool = False,
):
    """Distillation gradient step on the student; returns (loss, grad norm)."""
    with no_grad():
        z_t = mlp_forward(teacher, batch.x)
    z_s = mlp_forward(student, batch.x)
    loss = kd_loss(z_s, z_t, temps, tau_squared=tau_squared)
    if not math.isfinite(float(loss)):
        raise FloatingPointError(f"non-finite distillation loss {float(loss)}")
    grads = grad(loss, student)
    sgd_step(student, grads, sgd_state)
    return float(loss), grad_norm(grads)


def grad_norm(grads: dict) -> float:
    sq = 0.0
    for g in grads.values():
        d = g.data if isinstance(g, Tensor) else g
        sq += float((d**2).sum())
    return math.sqrt(sq)


def mkd_step(
    student: dict,
    meta: dict,
    teacher: dict,
    train_batch,
    val_batch,
    sgd_state: SGDState,
    adamw_state: AdamWState,
    *,
    tau_init: float,
    step: int,
    objective: str = "eq8",
    grad_mode: str = "exact",
    tau_squared: bool = False,
    meta_enabled: bool = True,
) -> MetaStepTrace:
    """One full meta-distillation step; mutates student/meta params in place.

    With ``meta_enabled`` False (or a zero meta learning rate) the step
    reduces to a fixed-temperature distillation update.
    """
    val_loss = 0.0
    meta_norm = 0.0
    if meta_enabled:
        fn = meta_grad_exact if grad_mode == "exact" else meta_grad_fd
        meta_grads, _, val_loss = fn(
            student, meta, teacher, train_batch, val_batch,
            alpha=sgd_state.lr, tau_init=tau_init,
            objective=objective, tau_squared=tau_squared,
        )
        meta_norm = grad_norm(meta_grads)
        if not math.isfinite(val_loss):
            raise FloatingPointError(
                f"mkd_step {step}: non-finite validation loss {val_loss}"
            )
        adamw_step(meta, meta_grads, adamw_state)

    temps = tempnet_forward(meta, tau_init)
    tau_s, tau_t = temps.values()
    lo, hi = tau_init - 0.5, tau_init + 0.5
    if not (lo < tau_s < hi and lo < tau_t < hi):
        raise FloatingPointError(
            f"mkd_step {step}: temperatures ({tau_s}, {tau_t}) left ({lo}, {hi})"
        )

    train_loss, student_norm = kd_student_update(
        student, teacher, train_batch, temps, sgd_state, tau_squared
    )

    return MetaStepTrace(
        step=step,
        train_loss=train_loss,
        val_loss=float(val_loss),
        tau_s=tau_s,
        tau_t=tau_t,
        student_grad_norm=student_norm,
        meta_grad_norm=meta_norm,
    )
