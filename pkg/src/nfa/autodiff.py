"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Everything the search needs (dense blocks, adapters, Gumbel-softmax,
cross-entropy, the parameter penalty) is expressible with the small op set
below. Graphs are built eagerly: each op returns a new :class:`Tensor`
holding its value, its parents, and a closure that maps the output gradient
to input gradients.

Elementwise binary ops broadcast only over leading batch dimensions: the
smaller operand's shape must be an exact suffix of the larger one's.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ParameterSet",
    "Adam",
    "ShapeError",
    "NonFiniteError",
    "set_strict",
    "strict_enabled",
    "permissive",
    "backward",
    "forward_op",
    "constant",
    "parameter",
    "add",
    "mul",
    "matmul",
    "relu",
    "tanh",
    "sigmoid",
    "softmax_lastdim",
    "log",
    "tensor_sum",
    "tensor_mean",
    "concat_lastdim",
    "scale",
    "index_lastdim",
    "affine",
    "mse",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's shape rule."""


class NonFiniteError(ArithmeticError):
    """Raised in strict mode when a tensor holds NaN or infinity."""


_STRICT = True


def set_strict(flag):
    """Globally enable or disable non-finite checking. Strict is the default."""
    global _STRICT
    _STRICT = bool(flag)


def strict_enabled():
    return _STRICT


@contextmanager
def permissive():
    """Temporarily allow non-finite values to propagate."""
    global _STRICT
    prev = _STRICT
    _STRICT = False
    try:
        yield
    finally:
        _STRICT = prev


class Tensor:
    """A node in the computation graph.

    ``grad`` is lazily allocated: only nodes with ``requires_grad`` that are
    graph leaves (parameters) keep gradients after :func:`backward`;
    intermediate gradients live in a scratch map during the sweep.
    """

    __slots__ = ("value", "grad", "requires_grad", "op", "inputs", "_backward_fn", "visits")

    def __init__(self, value, requires_grad=False, op="leaf", inputs=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        if _STRICT and not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"non-finite values in tensor produced by op '{op}'")
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.inputs = tuple(inputs)
        self.grad = None
        self._backward_fn = backward_fn
        self.visits = 0

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value):
    return Tensor(value, requires_grad=False)


def parameter(value):
    return Tensor(value, requires_grad=True)


def _make(kind, value, inputs, backward_fn):
    requires = any(t.requires_grad for t in inputs)
    return Tensor(value, requires, kind, inputs, backward_fn if requires else None)


def _suffix_broadcastable(sa, sb):
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    return big[len(big) - len(small):] == small


def _unbroadcast(g, shape):
    """Reduce a gradient back to ``shape`` after suffix broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def _check_binary(kind, a, b):
    if not _suffix_broadcastable(a.shape, b.shape):
        raise ShapeError(f"{kind}: shape {a.shape} does not suffix-broadcast with {b.shape}")


def add(a, b):
    _check_binary("add", a, b)
    return _make(
        "add",
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b):
    _check_binary("mul", a, b)
    return _make(
        "mul",
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b):
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _make(
        "matmul",
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def relu(x):
    mask = x.value > 0.0
    return _make("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def tanh(x):
    y = np.tanh(x.value)
    return _make("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    with np.errstate(over="ignore"):  # exp overflow saturates to exactly 0 or 1
        y = 1.0 / (1.0 + np.exp(-x.value))
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax_lastdim(x):
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _make("softmax_lastdim", s, (x,), bwd)


def log(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.value)
    return _make("log", out, (x,), lambda g: (g / x.value,))


def tensor_sum(x, axis=None):
    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make("sum", x.value.sum(axis=axis), (x,), bwd)


def tensor_mean(x, axis=None):
    n = x.value.size if axis is None else x.shape[axis]
    if n == 0:
        raise ShapeError("mean: cannot reduce over an empty axis")

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),)

    return _make("mean", x.value.mean(axis=axis), (x,), bwd)


def concat_lastdim(nodes):
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("concat_lastdim: no inputs")
    lead = nodes[0].shape[:-1]
    for n in nodes:
        if n.shape[:-1] != lead:
            raise ShapeError(f"concat_lastdim: leading shapes differ ({lead} vs {n.shape[:-1]})")
    widths = [n.shape[-1] for n in nodes]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=-1))

    return _make("concat_lastdim", np.concatenate([n.value for n in nodes], axis=-1), tuple(nodes), bwd)


def scale(x, c):
    c = float(c)
    return _make("scale", x.value * c, (x,), lambda g: (g * c,))


def index_lastdim(x, k):
    """Select index ``k`` along the last dimension (differentiable gather)."""
    k = int(k)
    if not 0 <= k < x.shape[-1]:
        raise ShapeError(f"index_lastdim: index {k} out of range for shape {x.shape}")

    def bwd(g):
        gx = np.zeros(x.shape)
        gx[..., k] = g
        return (gx,)

    return _make("index_lastdim", x.value[..., k], (x,), bwd)


_OPS = {
    "matmul": lambda inputs, **kw: matmul(*inputs),
    "add": lambda inputs, **kw: add(*inputs),
    "mul": lambda inputs, **kw: mul(*inputs),
    "relu": lambda inputs, **kw: relu(*inputs),
    "tanh": lambda inputs, **kw: tanh(*inputs),
    "sigmoid": lambda inputs, **kw: sigmoid(*inputs),
    "softmax_lastdim": lambda inputs, **kw: softmax_lastdim(*inputs),
    "log": lambda inputs, **kw: log(*inputs),
    "sum": lambda inputs, axis=None: tensor_sum(inputs[0], axis=axis),
    "mean": lambda inputs, axis=None: tensor_mean(inputs[0], axis=axis),
    "concat_lastdim": lambda inputs, **kw: concat_lastdim(inputs),
    "scale": lambda inputs, c=1.0: scale(inputs[0], c),
    "index_lastdim": lambda inputs, k=0: index_lastdim(inputs[0], k),
}


def forward_op(kind, inputs, **kwargs):
    """Dispatch-by-name entry point mirroring the op table above."""
    if kind not in _OPS:
        raise ValueError(f"unknown op kind {kind!r}")
    return _OPS[kind](list(inputs), **kwargs)


def _toposort(root):
    order = []
    VISITING, DONE = 0, 1
    state = {}
    stack = [(root, iter(root.inputs))]
    state[id(root)] = VISITING
    while stack:
        node, it = stack[-1]
        child = next(it, None)
        if child is None:
            stack.pop()
            state[id(node)] = DONE
            order.append(node)
            continue
        mark = state.get(id(child))
        if mark is VISITING:
            raise ValueError(f"cycle detected in computation graph at op '{child.op}'")
        if mark is None:
            state[id(child)] = VISITING
            stack.append((child, iter(child.inputs)))
    return order  # parents after children; root last


def backward(loss):
    """Populate ``grad`` on every reachable requires_grad leaf of ``loss``.

    Each node's backward contribution is applied exactly once (topological
    order); ``visits`` counts applications for auditability.
    """
    if loss.value.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = _toposort(loss)
    grads = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        node.visits += 1
        if node._backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for inp, gi in zip(node.inputs, node._backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(id(inp))
            grads[id(inp)] = gi if prev is None else prev + gi


class ParameterSet:
    """An ordered, uniquely named collection of tensors with a total count."""

    def __init__(self, entries=None):
        self._entries = {}
        if entries:
            for name, t in entries.items():
                self.add(name, t)

    def add(self, name, tensor):
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._entries[name] = tensor

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def items(self):
        return self._entries.items()

    def names(self):
        return list(self._entries)

    def tensors(self):
        return list(self._entries.values())

    @property
    def count(self):
        return sum(t.value.size for t in self._entries.values())

    def merge(self, other, prefix=""):
        for name, t in other.items():
            self.add(prefix + name, t)
        return self

    def clone(self, requires_grad=True):
        out = ParameterSet()
        for name, t in self.items():
            out.add(name, Tensor(t.value.copy(), requires_grad=requires_grad))
        return out

    def set_requires_grad(self, flag):
        for t in self._entries.values():
            t.requires_grad = bool(flag)
            if not flag:
                t.grad = None

    def zero_grads(self):
        for t in self._entries.values():
            t.grad = None

    def checksum(self):
        """SHA-256 over names and raw value bytes; detects any mutation."""
        h = hashlib.sha256()
        for name, t in self._entries.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.value).tobytes())
        return h.hexdigest()


class Adam:
    """Standard adaptive-moment optimizer over a :class:`ParameterSet`."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self._m = {name: np.zeros(t.shape) for name, t in params.items()}
        self._v = {name: np.zeros(t.shape) for name, t in params.items()}

    def step(self):
        if len(self.params) == 0:
            return
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"adam step: parameter {name!r} has no gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        self.params.zero_grads()


def affine(x, w, b):
    """x @ w + b, the building block for dense layers and adapters."""
    return add(matmul(x, w), b)


def mse(pred, target):
    """Mean squared error over all elements (regression pretraining loss)."""
    diff = add(pred, scale(target, -1.0))
    return tensor_mean(mul(diff, diff))
