"""Reverse-mode automatic differentiation on dense float64 tensors.

The graph is built define-by-run: every operation on tensors that require
gradients records its parents and a backward closure. Backward closures are
themselves written in terms of tensor operations, so calling ``grad`` with
``create_graph=True`` produces gradients that are part of a new graph and can
be differentiated again (needed for the one-step-lookahead meta gradient).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "grad",
    "finite_difference_grad",
    "primitive_forward",
    "matmul",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "tsum",
    "tmean",
    "max_along_axis",
    "reshape",
    "broadcast_to",
    "concat",
    "softmax_stable",
    "log_softmax",
    "DimensionError",
    "DomainError",
    "GradError",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of the operation."""


class GradError(RuntimeError):
    """A gradient request violates the backward contract."""


import threading

_state = threading.local()


def _grad_on() -> bool:
    # per-thread flag: graphs are thread-confined, so one thread's no_grad
    # scope must not disable recording in concurrent grid-search workers
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager disabling graph recording inside its scope."""

    def __enter__(self):
        self._prev = _grad_on()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """Dense n-d float64 array, optionally recorded on the autodiff graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all routed through the op constructors below
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    """Create a result tensor, recording the node only when grad is on."""
    if _grad_on() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Reduce a broadcasted gradient back to ``shape`` using tensor ops."""
    if g.shape == tuple(shape):
        return g
    extra = g.data.ndim - len(shape)
    for _ in range(extra):
        g = tsum(g, axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = tsum(g, axis=ax, keepdims=True)
    if g.shape != tuple(shape):
        g = reshape(g, tuple(shape))
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(mul(g, Tensor(-1.0)), b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(div(g, b), a.shape),
            _unbroadcast(mul(g, div(mul(a, Tensor(-1.0)), mul(b, b))), b.shape),
        ),
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (mul(g, Tensor(c)),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected 2-d tensor, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (transpose(g),))


def relu(a: Tensor) -> Tensor:
    mask = Tensor((a.data > 0).astype(np.float64))
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (mul(g, mask),))


def sigmoid(a: Tensor) -> Tensor:
    # overflow of exp(-x) for very negative x saturates to the correct 0.0
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(s, (a,), None)
    if out._parents:
        # backward in terms of the output tensor keeps second order exact
        out._backward = lambda g: (mul(g, mul(out, sub(Tensor(1.0), out))),)
    return out


def exp(a: Tensor) -> Tensor:
    out = _make(np.exp(a.data), (a,), None)
    if out._parents:
        out._backward = lambda g: (mul(g, out),)
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input contains non-positive values")
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def backward(g):
        gd = g
        if axis is not None and not keepdims:
            kshape = list(shape)
            kshape[axis] = 1
            gd = reshape(gd, tuple(kshape))
        return (broadcast_to(gd, shape),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return scalar_mul(s, 1.0 / n)


def max_along_axis(a: Tensor, axis: int, keepdims=False) -> Tensor:
    # ties route the gradient to the lowest index, matching argmax
    idx = np.argmax(a.data, axis=axis)
    onehot = np.zeros_like(a.data)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)
    mask = Tensor(onehot)
    out_data = a.data.max(axis=axis, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        gd = g
        if not keepdims:
            kshape = list(shape)
            kshape[axis] = 1
            gd = reshape(gd, tuple(kshape))
        return (mul(broadcast_to(gd, shape), mask),)

    return _make(out_data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {shape}")
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast: cannot broadcast {a.shape} to {shape}")
    old = a.shape
    return _make(data, (a,), lambda g: (_unbroadcast(g, old),))


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.data.ndim
            sl[axis] = slice(int(lo), int(hi))
            grads.append(_slice(g, tuple(sl)))
        return tuple(grads)

    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.shape for t in tensors]}"
        )
    return _make(data, tuple(tensors), backward)


def _slice(a: Tensor, sl) -> Tensor:
    shape = a.shape
    return _make(a.data[sl].copy(), (a,), lambda g: (_scatter(g, sl, shape),))


def _scatter(g: Tensor, sl, shape) -> Tensor:
    def backward(gg):
        return (_slice(gg, sl),)

    out = np.zeros(shape)
    out[sl] = g.data
    return _make(out, (g,), backward)


def softmax_stable(z: Tensor, axis=-1) -> Tensor:
    """Shift-invariant softmax; the row max is subtracted as a constant."""
    m = Tensor(z.data.max(axis=axis, keepdims=True))
    e = exp(sub(z, m))
    return div(e, tsum(e, axis=_norm_axis(axis, z), keepdims=True))


def log_softmax(z: Tensor, axis=-1) -> Tensor:
    m = Tensor(z.data.max(axis=axis, keepdims=True))
    shifted = sub(z, m)
    lse = log(tsum(exp(shifted), axis=_norm_axis(axis, z), keepdims=True))
    return sub(shifted, lse)


def _norm_axis(axis, t):
    return axis % t.data.ndim if axis is not None and axis < 0 else axis


_PRIMITIVES = {
    "matmul": lambda ins: matmul(*ins),
    "add": lambda ins: add(*ins),
    "sub": lambda ins: sub(*ins),
    "mul": lambda ins: mul(*ins),
    "scalar_mul": lambda ins, c: scalar_mul(ins[0], c),
    "relu": lambda ins: relu(*ins),
    "sigmoid": lambda ins: sigmoid(*ins),
    "exp": lambda ins: exp(*ins),
    "log": lambda ins: log(*ins),
    "sum": lambda ins: tsum(*ins),
    "mean": lambda ins: tmean(*ins),
    "max_along_axis": lambda ins, axis=0: max_along_axis(ins[0], axis),
    "broadcast": lambda ins, shape=None: broadcast_to(ins[0], shape),
    "reshape": lambda ins, shape=None: reshape(ins[0], shape),
    "concat": lambda ins, axis=0: concat(ins, axis=axis),
    "softmax_stable": lambda ins: softmax_stable(*ins),
}


def primitive_forward(op_kind: str, inputs, **kwargs) -> Tensor:
    """Dispatch a named primitive; see module-level functions for details."""
    if op_kind not in _PRIMITIVES:
        raise ValueError(f"unknown op_kind {op_kind!r}")
    fn = _PRIMITIVES[op_kind]
    inputs = [_as_tensor(t) for t in inputs]
    return fn(inputs, **kwargs) if kwargs else fn(inputs)


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss: Tensor, wrt, create_graph: bool = False):
    """Reverse-mode gradients of a scalar ``loss`` w.r.t. ``wrt`` tensors.

    ``wrt`` may be a dict name -> Tensor (returns a dict of same keys) or a
    list of tensors (returns a list). Parameters not reachable from the loss
    get zero gradients of matching shape.
    """
    if loss.data.size != 1:
        raise GradError(f"backward: loss must be scalar, got shape {loss.shape}")
    as_dict = isinstance(wrt, dict)
    targets = list(wrt.values()) if as_dict else list(wrt)
    for t in targets:
        if not t.requires_grad:
            raise GradError("backward: a requested parameter does not require grad")

    order = _topo_order(loss)
    grads = {id(loss): Tensor(np.ones_like(loss.data))}

    ctx = no_grad() if not create_graph else _nullcontext()
    with ctx:
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = add(grads[id(p)], pg)
                else:
                    grads[id(p)] = pg

    out = []
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        out.append(g)
    if as_dict:
        return dict(zip(wrt.keys(), out))
    return out


class _nullcontext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def finite_difference_grad(f, params, h: float = 1e-6):
    """Central-difference gradient oracle for a scalar function of ``params``.

    ``params`` is a dict name -> Tensor; ``f`` is called with the dict and
    must return a float (or scalar tensor). Returns a dict of numpy arrays.
    """
    if h <= 0:
        raise ValueError("finite_difference_grad: h must be positive")
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = _scalar(f(params))
            p.data[idx] = orig - h
            fm = _scalar(f(params))
            p.data[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(
                    f"finite_difference_grad: non-finite value at {name}{list(idx)}"
                )
            g[idx] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def _scalar(x):
    return float(x.data) if isinstance(x, Tensor) else float(x)
