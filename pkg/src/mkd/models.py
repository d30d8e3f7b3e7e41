"""MLP teacher/student networks and the temperature prediction network.

Parameters are plain dicts mapping names ("w0", "b0", ...) to leaf tensors,
so the same forward code runs both on optimizer-held leaves and on graph-born
lookahead parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, matmul, relu, sigmoid, tsum

EMBED_DIM = 8
TEMPNET_HIDDEN = 16


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    hidden_dims: tuple
    output_dim: int

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"all MLP dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass(frozen=True)
class Temperatures:
    tau_s: Tensor
    tau_t: Tensor

    def values(self):
        return float(self.tau_s), float(self.tau_t)


def _glorot_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def mlp_init(config: MLPConfig, seed: int) -> dict:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    dims = config.layer_dims
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"w{i}"] = Tensor(_glorot_uniform(rng, din, dout), requires_grad=True)
        params[f"b{i}"] = Tensor(np.zeros(dout), requires_grad=True)
    return params


def num_layers(params: dict) -> int:
    return sum(1 for k in params if k.startswith("w"))


def mlp_forward(params: dict, x: Tensor) -> Tensor:
    """Logits of the MLP; ReLU between layers, none on the output."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    n = num_layers(params)
    h = x
    for i in range(n):
        h = matmul(h, params[f"w{i}"]) + params[f"b{i}"]
        if i < n - 1:
            h = relu(h)
    return h


def freeze(params: dict) -> dict:
    """Detached copy: no gradients ever flow into these weights."""
    return {k: v.detach() for k, v in params.items()}


def meta_init(tau_init: float, seed: int) -> dict:
    """Temperature-network parameters; the zeroed head makes the initial
    temperatures exactly tau_init."""
    if tau_init <= 0.5:
        raise ConfigError(
            f"tau_init must exceed 0.5 to keep temperatures positive, got {tau_init}"
        )
    rng = np.random.default_rng(seed)
    return {
        "e": Tensor(
            _glorot_uniform(rng, 1, EMBED_DIM), requires_grad=True
        ),
        "w1": Tensor(
            _glorot_uniform(rng, EMBED_DIM, TEMPNET_HIDDEN), requires_grad=True
        ),
        "b1": Tensor(np.zeros(TEMPNET_HIDDEN), requires_grad=True),
        "w2": Tensor(np.zeros((TEMPNET_HIDDEN, 2)), requires_grad=True),
        "b2": Tensor(np.zeros(2), requires_grad=True),
    }


def tempnet_forward(meta: dict, tau_init: float) -> Temperatures:
    """Map the learnable embedding through the 2-layer net to (tau_s, tau_t).

    Both outputs lie strictly inside (tau_init - 0.5, tau_init + 0.5).
    """
    h = relu(matmul(meta["e"], meta["w1"]) + meta["b1"])
    out = matmul(h, meta["w2"]) + meta["b2"]
    tau = sigmoid(out) + Tensor(tau_init - 0.5)
    sel_s = Tensor(np.array([[1.0, 0.0]]))
    sel_t = Tensor(np.array([[0.0, 1.0]]))
    return Temperatures(tau_s=tsum(tau * sel_s), tau_t=tsum(tau * sel_t))
