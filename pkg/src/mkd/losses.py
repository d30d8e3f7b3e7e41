"""Distillation and classification losses.

The distillation loss is the plain soft cross-entropy between temperature-
softened teacher and student distributions, averaged over the batch. The
meta loss is a squared-error objective summed over the misclassified samples
of a validation batch.
"""

from __future__ import annotations

import numpy as np

from .autograd import (
    DimensionError,
    DomainError,
    Tensor,
    log_softmax,
    softmax_stable,
    tmean,
    tsum,
)
from .models import Temperatures


def _as_temps(tau) -> Temperatures:
    if isinstance(tau, Temperatures):
        return tau
    tau_s, tau_t = tau
    if not isinstance(tau_s, Tensor):
        tau_s = Tensor(float(tau_s))
    if not isinstance(tau_t, Tensor):
        tau_t = Tensor(float(tau_t))
    return Temperatures(tau_s=tau_s, tau_t=tau_t)


def kd_loss(z_s: Tensor, z_t: Tensor, tau, tau_squared: bool = False) -> Tensor:
    """Soft cross-entropy CE(p_s, p_t) with per-side temperatures.

    The teacher logits are detached (the teacher is frozen) but its
    temperature stays differentiable. ``tau_squared`` optionally applies the
    classical tau_s*tau_t gradient-scale correction; off by default.
    """
    temps = _as_temps(tau)
    if z_s.shape != z_t.shape:
        raise DimensionError(
            f"kd_loss: logit shapes differ, student {z_s.shape} vs teacher {z_t.shape}"
        )
    ts, tt = temps.values()
    if ts <= 0 or tt <= 0:
        raise DomainError(f"kd_loss: temperatures must be positive, got ({ts}, {tt})")
    p_t = softmax_stable(z_t.detach() / temps.tau_t, axis=1)
    logp_s = log_softmax(z_s / temps.tau_s, axis=1)
    loss = tmean(-tsum(p_t * logp_s, axis=1))
    if tau_squared:
        loss = loss * temps.tau_s * temps.tau_t
    return loss


def ce_loss(z: Tensor, y: Tensor) -> Tensor:
    """Mean cross-entropy against (possibly soft) target distributions."""
    if not isinstance(y, Tensor):
        y = Tensor(y)
    if z.shape != y.shape:
        raise DimensionError(f"ce_loss: shapes differ, {z.shape} vs {y.shape}")
    return tmean(-tsum(y.detach() * log_softmax(z, axis=1), axis=1))


def meta_loss(p_s: Tensor, y: Tensor) -> Tensor:
    """Summed squared error over the misclassified samples only.

    The incorrectness mask compares argmax rows (ties to the lowest index)
    and is treated as a constant: gradients flow only through p_s.
    """
    if not isinstance(y, Tensor):
        y = Tensor(y)
    if p_s.shape != y.shape:
        raise DimensionError(f"meta_loss: shapes differ, {p_s.shape} vs {y.shape}")
    wrong = np.argmax(p_s.data, axis=1) != np.argmax(y.data, axis=1)
    mask = Tensor(wrong.astype(np.float64)[:, None])
    diff = p_s - y.detach()
    return tsum(mask * diff * diff)


def label_smooth(y: np.ndarray, eps: float) -> np.ndarray:
    """(1-eps)*y + eps/c, rowwise; keeps rows on the simplex."""
    if not 0 <= eps < 1:
        raise ValueError(f"label_smooth: eps must be in [0, 1), got {eps}")
    c = y.shape[-1]
    return (1.0 - eps) * y + eps / c


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out
