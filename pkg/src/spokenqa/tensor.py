"""Dense float64 tensors with reverse-mode automatic differentiation.

Deliberately small: row-major numpy storage, a tape of executed operations
replayed in reverse, and a finite-difference gradient checker. No GPU paths,
no graph compilation, no higher-order derivatives.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ContractError, ParameterError, ShapeError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (frozen-model forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class TapeEntry:
    """One executed operation: the tensors it read plus its local backward rule.

    backward_rule maps the output gradient to one gradient per input
    (None where nothing flows).
    """

    __slots__ = ("inputs", "backward_rule")

    def __init__(self, inputs, backward_rule):
        self.inputs = inputs
        self.backward_rule = backward_rule


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_entry", "_backward_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._entry = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return pow_const(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, inputs, backward_rule):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._backward_done = False
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._entry = TapeEntry(tuple(inputs), backward_rule)
    else:
        out.requires_grad = False
        out._entry = None
    return out


class Tape:
    """Topologically ordered record of the operations reachable from an output.

    Execution order guarantees inputs precede consumers; trace() recovers one
    such order, and backward() walks it in reverse exactly once.
    """

    def __init__(self, tensors):
        self.tensors = tensors

    @classmethod
    def trace(cls, output):
        order = []
        state = {}  # id -> 1 scheduled, 2 emitted
        stack = [output]
        while stack:
            t = stack.pop()
            st = state.get(id(t), 0)
            if st == 2:
                continue
            if st == 1:
                state[id(t)] = 2
                order.append(t)
                continue
            state[id(t)] = 1
            stack.append(t)
            if t._entry is not None:
                for p in t._entry.inputs:
                    if state.get(id(p), 0) == 0 and p._entry is not None:
                        stack.append(p)
        return cls(order)


def backward(loss):
    """Accumulate dloss/dleaf into .grad of every requires_grad leaf.

    loss must be a scalar tensor. A second backward through the same loss
    tensor is an error; recompute the forward pass instead.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_done:
        raise ContractError("backward already ran for this tensor; rebuild the graph")
    loss._backward_done = True

    if loss._entry is None:
        if loss.requires_grad:
            g = np.ones_like(loss.data)
            loss.grad = g if loss.grad is None else loss.grad + g
        return

    tape = Tape.trace(loss)
    flowing = {id(loss): np.ones_like(loss.data)}
    leaves = {}

    def push(t, g):
        if g is None:
            return
        if t._entry is None:
            if t.requires_grad:
                key = id(t)
                if key in leaves:
                    leaves[key] = (t, leaves[key][1] + g)
                else:
                    leaves[key] = (t, np.array(g, dtype=np.float64))
        else:
            key = id(t)
            if key in flowing:
                flowing[key] = flowing[key] + g
            else:
                flowing[key] = g

    for t in reversed(tape.tensors):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        grads_in = t._entry.backward_rule(g)
        for p, gp in zip(t._entry.inputs, grads_in):
            push(p, gp)

    for t, g in leaves.values():
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Reduce gradient g back down to the given operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = _lift(a), _lift(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    a, b = _lift(a), _lift(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    a, b = _lift(a), _lift(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b):
    a, b = _lift(a), _lift(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def neg(a):
    a = _lift(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def pow_const(a, k):
    a = _lift(a)
    k = float(k)
    return _make(a.data**k, (a,), lambda g: (g * k * a.data ** (k - 1.0),))


def sqrt(a):
    return pow_const(a, 0.5)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a):
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def tsum(a, axis=None, keepdims=False):
    a = _lift(a)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a, axis=None, keepdims=False):
    a = _lift(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def concat(parts, axis=0):
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(slicer)])
        return tuple(outs)

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def narrow(a, axis, start, length):
    """Contiguous slice of `length` along `axis` starting at `start`."""
    a = _lift(a)
    if not (0 <= start and length >= 0 and start + length <= a.data.shape[axis]):
        raise ShapeError(
            f"narrow [{start}:{start + length}] outside axis {axis} of shape {a.shape}"
        )
    slicer = [slice(None)] * a.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)

    def back(g):
        full = np.zeros_like(a.data)
        full[slicer] = g
        return (full,)

    return _make(a.data[slicer].copy(), (a,), back)


def take(a, key):
    """General numpy-style indexing with scatter-add backward."""
    a = _lift(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(a.data[key], dtype=np.float64), (a,), back)


def rows(table, ids):
    """Row gather used for embedding lookup; duplicate ids accumulate."""
    table = _lift(table)
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make(table.data[ids], (table,), back)


def tile_rows(a, n):
    """Repeat a single-row tensor n times along axis 0."""
    a = _lift(a)
    if a.ndim != 2 or a.shape[0] != 1:
        raise ShapeError(f"tile_rows expects shape (1, d), got {a.shape}")
    return _make(
        np.repeat(a.data, n, axis=0),
        (a,),
        lambda g: (g.sum(axis=0, keepdims=True),),
    )


def gelu(a):
    """Gaussian error linear unit; smooth, so finite differences stay honest."""
    a = _lift(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _make(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def dropout(a, rate, rng):
    """Inverted dropout. rate 0 or rng None is the identity."""
    a = _lift(a)
    if rate < 0.0 or rate >= 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


def _check_tau(tau):
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0.0:
        raise ParameterError(f"temperature must be a finite positive number, got {tau}")
    return tau


def softmax_t(a, tau):
    """Temperature softmax over the last axis, stabilized by max subtraction."""
    a = _lift(a)
    tau = _check_tau(tau)
    z = a.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner) / tau,)

    return _make(p, (a,), back)


def log_softmax_t(a, tau):
    """Log of the temperature softmax over the last axis."""
    a = _lift(a)
    tau = _check_tau(tau)
    z = a.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    p = np.exp(logp)

    def back(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / tau,)

    return _make(logp, (a,), back)


def grad_check(f, x, eps=1e-5):
    """Compare analytic gradients of scalar-valued f against central differences.

    Returns the maximum of |analytic - numeric| / max(1, |analytic|, |numeric|)
    over the components of x. f must be deterministic; two forward evaluations
    that disagree raise ContractError.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    eps = float(eps)
    if not 1e-6 <= eps <= 1e-3:
        raise ParameterError(f"grad_check eps must lie in [1e-6, 1e-3], got {eps}")

    base = np.array(x.data, dtype=np.float64)
    y1 = f(Tensor(base.copy()))
    y2 = f(Tensor(base.copy()))
    if not isinstance(y1, Tensor) or y1.ndim != 0:
        raise ContractError("grad_check expects f to return a scalar Tensor")
    if not np.array_equal(y1.data, y2.data):
        raise ContractError("grad_check requires a deterministic f")

    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        hi = base.copy().reshape(-1)
        lo = base.copy().reshape(-1)
        hi[i] += eps
        lo[i] -= eps
        fp = f(Tensor(hi.reshape(base.shape))).item()
        fm = f(Tensor(lo.reshape(base.shape))).item()
        flat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max()) if rel.size else 0.0
