"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records operations as they execute (define-by-run).  Calling
``Tape.backward(root)`` sweeps the recorded nodes in reverse creation order,
which is a valid topological order by construction, and accumulates
gradients into a map keyed by the participating tensors.

Outside of any active tape the same operations run as plain numpy compute,
so evaluation code can reuse the training code paths without paying for
graph bookkeeping.
"""
from __future__ import annotations

import numpy as np
from scipy import special as _special

__all__ = [
    "Tensor",
    "Tape",
    "AutodiffError",
    "ShapeError",
    "DomainError",
    "BackwardError",
    "elementwise",
    "reduce",
    "matmul",
    "backward",
    "primitive",
    "exp",
    "log",
    "sin",
    "relu",
    "gelu",
    "sigmoid",
    "square",
    "absolute",
    "softplus",
    "reshape",
    "index_column",
]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class AutodiffError(Exception):
    """Base error for tape/tensor misuse."""


class ShapeError(AutodiffError):
    pass


class DomainError(AutodiffError):
    pass


class BackwardError(AutodiffError):
    """Raised when the reverse sweep encounters a non-finite value."""


_TAPE_STACK: list["Tape"] = []


class Node:
    __slots__ = ("op", "out", "parents", "backward_fn", "tape")

    def __init__(self, op, out, parents, backward_fn, tape):
        self.op = op
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.tape = tape


class Tensor:
    """Dense float64 array with an optional position on the active tape."""

    __slots__ = ("data", "grad", "node", "name")

    def __init__(self, data, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # arithmetic sugar; all routed through the same recorded kernels
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", other, self)

    def __neg__(self):
        return elementwise("neg", self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return reduce("sum", self, axis)

    def mean(self, axis=None):
        return reduce("mean", self, axis)

    def reshape(self, shape):
        return reshape(self, shape)


class Tape:
    """Append-only operation record; consumed by a single backward pass."""

    def __init__(self):
        self.nodes = []
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise AutodiffError("tape stack corrupted by out-of-order exit")
        return False

    def record(self, node):
        if self._consumed:
            raise AutodiffError("tape already consumed by backward()")
        self.nodes.append(node)

    def backward(self, root):
        """Reverse sweep from a scalar root; returns {tensor: gradient}."""
        if root.size != 1:
            raise ShapeError(
                f"backward root must be scalar, got shape {root.shape}"
            )
        if self._consumed:
            raise AutodiffError("tape already consumed by backward()")
        if root.node is not None and root.node.tape is not self:
            raise AutodiffError("root was recorded on a different tape")
        if not np.isfinite(root.data).all():
            raise BackwardError("non-finite value at backward root")
        grads = {root: np.ones_like(root.data)}
        for node in reversed(self.nodes):
            gout = grads.get(node.out)
            if gout is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(gout)):
                if g is None:
                    continue
                if not np.isfinite(g).all():
                    raise BackwardError(
                        f"non-finite gradient produced by op '{node.op}'"
                    )
                acc = grads.get(parent)
                grads[parent] = g if acc is None else acc + g
        for t, g in grads.items():
            t.grad = g
        self.nodes.clear()
        self._consumed = True
        return grads


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op, data, parents, backward_fn):
    out = Tensor(data)
    tape = active_tape()
    if tape is not None:
        node = Node(op, out, parents, backward_fn, tape)
        out.node = node
        tape.record(node)
    return out


def primitive(op, data, parents, backward_fn):
    """Register a custom operation on the active tape.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    parent, in order.  Lets other modules add differentiable kernels that
    would be wasteful to express as elementwise graphs.
    """
    return _record(op, data, tuple(parents), backward_fn)


def _unbroadcast(g, shape):
    # sum a broadcast gradient back down to the original operand shape
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(op, a, b, data, da, db):
    ash, bsh = a.shape, b.shape

    def backward_fn(g):
        return _unbroadcast(da(g), ash), _unbroadcast(db(g), bsh)

    return _record(op, data, (a, b), backward_fn)


def elementwise(op, a, b=None):
    """Apply a named elementwise kernel; binary kernels broadcast like numpy."""
    a = _coerce(a)
    if op in _BINARY_OPS:
        if b is None:
            raise AutodiffError(f"op '{op}' is binary, second operand missing")
        return _BINARY_OPS[op](a, _coerce(b))
    if op in _UNARY_OPS:
        if b is not None:
            raise AutodiffError(f"op '{op}' is unary, second operand not allowed")
        return _UNARY_OPS[op](a)
    raise AutodiffError(f"unknown elementwise op '{op}'")


def _op_add(a, b):
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: incompatible shapes {a.shape} vs {b.shape}") from e
    return _binary("add", a, b, data, lambda g: g, lambda g: g)


def _op_sub(a, b):
    try:
        data = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"sub: incompatible shapes {a.shape} vs {b.shape}") from e
    return _binary("sub", a, b, data, lambda g: g, lambda g: -g)


def _op_mul(a, b):
    ad, bd = a.data, b.data
    try:
        data = ad * bd
    except ValueError as e:
        raise ShapeError(f"mul: incompatible shapes {a.shape} vs {b.shape}") from e
    return _binary("mul", a, b, data, lambda g: g * bd, lambda g: g * ad)


def _op_div(a, b):
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise DomainError("div: zero divisor")
    try:
        data = ad / bd
    except ValueError as e:
        raise ShapeError(f"div: incompatible shapes {a.shape} vs {b.shape}") from e
    return _binary(
        "div", a, b, data, lambda g: g / bd, lambda g: -g * ad / (bd * bd)
    )


def _op_neg(a):
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def _op_exp(a):
    data = np.exp(a.data)
    return _record("exp", data, (a,), lambda g: (g * data,))


def _op_log(a):
    ad = a.data
    if np.any(ad <= 0.0):
        raise DomainError("log: non-positive operand")
    return _record("log", np.log(ad), (a,), lambda g: (g / ad,))


def _op_sin(a):
    ad = a.data
    return _record("sin", np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def _op_relu(a):
    ad = a.data
    return _record("relu", np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0.0),))


def _op_gelu(a):
    # exact Gaussian-CDF form: x * Phi(x)
    ad = a.data
    cdf = _special.ndtr(ad)

    def backward_fn(g):
        pdf = np.exp(-0.5 * ad * ad) * _INV_SQRT_2PI
        return (g * (cdf + ad * pdf),)

    return _record("gelu", ad * cdf, (a,), backward_fn)


def _op_sigmoid(a):
    s = _special.expit(a.data)
    return _record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def _op_square(a):
    ad = a.data
    return _record("square", ad * ad, (a,), lambda g: (g * 2.0 * ad,))


def _op_abs(a):
    ad = a.data
    return _record("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def _op_softplus(a):
    # log(1 + e^x), computed stably; gradient is the logistic function
    ad = a.data
    data = np.logaddexp(0.0, ad)
    return _record("softplus", data, (a,), lambda g: (g * _special.expit(ad),))


_BINARY_OPS = {
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "div": _op_div,
}

_UNARY_OPS = {
    "neg": _op_neg,
    "exp": _op_exp,
    "log": _op_log,
    "sin": _op_sin,
    "relu": _op_relu,
    "gelu": _op_gelu,
    "sigmoid": _op_sigmoid,
    "square": _op_square,
    "abs": _op_abs,
    "softplus": _op_softplus,
}


def exp(a):
    return elementwise("exp", a)


def log(a):
    return elementwise("log", a)


def sin(a):
    return elementwise("sin", a)


def relu(a):
    return elementwise("relu", a)


def gelu(a):
    return elementwise("gelu", a)


def sigmoid(a):
    return elementwise("sigmoid", a)


def square(a):
    return elementwise("square", a)


def absolute(a):
    return elementwise("abs", a)


def softplus(a):
    return elementwise("softplus", a)


def matmul(a, b):
    """2-D matrix product with reverse-mode gradients for both operands."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward_fn(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", ad @ bd, (a, b), backward_fn)


def reduce(op, a, axis=None):
    """Reduce with 'sum' or 'mean' over all elements or a single axis."""
    a = _coerce(a)
    if a.size == 0:
        raise ShapeError(f"{op}: cannot reduce an empty tensor")
    if op not in ("sum", "mean"):
        raise AutodiffError(f"unknown reduce op '{op}'")
    ad = a.data
    shape = ad.shape
    if axis is None:
        n = ad.size
        data = ad.sum() if op == "sum" else ad.mean()

        def backward_fn(g):
            full = np.broadcast_to(g, shape)
            return (full if op == "sum" else full / n,)

    else:
        n = shape[axis]
        data = ad.sum(axis=axis) if op == "sum" else ad.mean(axis=axis)

        def backward_fn(g):
            expanded = np.expand_dims(g, axis)
            full = np.broadcast_to(expanded, shape)
            return (full if op == "sum" else full / n,)

    return _record(op, data, (a,), backward_fn)


def reshape(a, shape):
    a = _coerce(a)
    old = a.shape
    data = a.data.reshape(shape)
    return _record("reshape", data, (a,), lambda g: (g.reshape(old),))


def index_column(a, j):
    """Select column j of a 2-D tensor; gradient scatters back into place."""
    a = _coerce(a)
    if a.ndim != 2:
        raise ShapeError(f"index_column expects a 2-D tensor, got {a.shape}")
    ad = a.data
    if not -ad.shape[1] <= j < ad.shape[1]:
        raise ShapeError(f"column {j} out of range for shape {a.shape}")

    def backward_fn(g):
        z = np.zeros_like(ad)
        z[:, j] = g
        return (z,)

    return _record("index_column", ad[:, j].copy(), (a,), backward_fn)


def backward(root):
    """Run the reverse sweep on the tape that recorded ``root``."""
    if root.node is None:
        raise AutodiffError("root is not recorded on any tape")
    return root.node.tape.backward(root)
