"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array in the model is a :class:`Tensor`. Operations executed while a
:class:`Tape` is active are recorded together with a backward rule, so a
single ``tape.backward(loss)`` call populates ``grad`` on every
``requires_grad`` leaf. Without an active tape the same functions run
forward-only, which keeps evaluation cheap.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A row-major float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic operators delegate to the module-level ops so that the
    # recording logic lives in one place.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# Tape


_LOCAL = threading.local()


def _stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations for one reverse pass.

    Entries are appended in creation order, so each node's inputs precede
    it; replaying the list in reverse is a valid topological backward walk.
    The active tape is thread-local: tensors may move between threads, a
    tape may not.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        if popped is not self:
            raise RuntimeError("tape context exited out of order")

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, output: Tensor, backward_fn) -> None:
        self._entries.append((output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Seed the scalar root and run every recorded rule in reverse."""
        if self._consumed:
            raise RuntimeError("tape already consumed; build a fresh tape per backward pass")
        if loss.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._entries):
            if out.grad is not None:
                fn(out.grad)


def _record(out: Tensor, inputs: tuple, backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    """Safe accumulation: copies on first set.

    Use when ``grad`` may alias an array another tensor also receives
    (or a read-only broadcast view); later in-place adds must not leak
    across tensors.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(grad, dtype=np.float64)
    else:
        t.grad += grad


def _accumulate_owned(t: Tensor, grad: np.ndarray) -> None:
    """Adopt ``grad`` as the gradient buffer without copying.

    Only valid when the caller guarantees exclusivity: ``grad`` is freshly
    allocated for this tensor, or a writable view over a region of the
    output gradient that no other tensor adopts.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = grad
    else:
        t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        # the output buffer may be adopted by at most one input; the other
        # pass-through falls back to the copying path
        adopted = False
        for t in (a, b):
            gr = _unbroadcast(g, t.data.shape)
            if gr is not g:
                _accumulate_owned(t, gr)
            elif not adopted and t.requires_grad and t.grad is None:
                adopted = True
                _accumulate_owned(t, g)
            else:
                _accumulate(t, g)

    return _record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        _accumulate_owned(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate_owned(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)

    def backward(g):
        _accumulate_owned(a, -g)

    return _record(out, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        _accumulate_owned(a, g @ b.data.T)
        _accumulate_owned(b, a.data.T @ g)

    return _record(out, (a, b), backward)


def batched_matmul(a, b) -> Tensor:
    """Matrix product over the last two axes with shared leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 3 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"batched_matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def backward(g):
        _accumulate_owned(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accumulate_owned(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _record(out, (a, b), backward)


def linear(x, w, b) -> Tensor:
    """Affine map ``x @ w + b`` with ``x`` of shape (rows, d_in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: x {x.shape} vs w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear bias shape {b.shape} must be ({w.shape[1]},)")
    return add(matmul(x, w), b)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        _accumulate_owned(x, g.reshape(old))

    return _record(out, (x,), backward)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.transpose(x.data, axes))
    inverse = None if axes is None else np.argsort(axes)

    def backward(g):
        _accumulate_owned(x, np.transpose(g, inverse))

    return _record(out, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]

    def backward(g):
        start = 0
        index = [slice(None)] * g.ndim
        for t, size in zip(ts, sizes):
            index[axis] = slice(start, start + size)
            # disjoint writable views of the output buffer, safe to adopt
            _accumulate_owned(t, g[tuple(index)])
            start += size

    return _record(out, tuple(ts), backward)


def gather(x, indices, axis: int = 0) -> Tensor:
    """Select slices along ``axis``; backward scatter-adds (duplicates accumulate)."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    extent = x.data.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= extent):
        raise IndexError(f"gather index out of range for axis {axis} with extent {extent}")
    out = Tensor(np.take(x.data, idx, axis=axis))

    def backward(g):
        if not x.requires_grad:
            return
        buf = np.zeros_like(x.data)
        np.add.at(np.moveaxis(buf, axis, 0), idx, np.moveaxis(g, axis, 0))
        _accumulate_owned(x, buf)

    return _record(out, (x,), backward)


def slice_cols(x, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a 2-D tensor (cheaper than gather)."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"slice_cols expects a 2-D tensor, got shape {x.shape}")
    out = Tensor(np.ascontiguousarray(x.data[:, start:stop]))

    def backward(g):
        if not x.requires_grad:
            return
        buf = np.zeros_like(x.data)
        buf[:, start:stop] = g
        _accumulate_owned(x, buf)

    return _record(out, (x,), backward)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(gg, x.data.shape))

    return _record(out, (x,), backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.data.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# Nonlinearities and losses


def softmax(x, axis: int = -1) -> Tensor:
    """Max-stabilized softmax; slices along ``axis`` sum to one."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def backward(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        _accumulate_owned(x, p * (g - inner))

    return _record(out, (x,), backward)


def gelu(x) -> Tensor:
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = Tensor(x.data * cdf)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        _accumulate_owned(x, g * (cdf + x.data * pdf))

    return _record(out, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.data.shape[-1]
    if n < 2:
        raise ValueError(f"layer_norm needs last-axis length >= 2, got {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g):
        _accumulate_owned(gain, _unbroadcast(g * xhat, gain.data.shape))
        _accumulate(bias, _unbroadcast(g, bias.data.shape))
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate_owned(x, inv * (gx - m1 - xhat * m2))

    return _record(out, (x, gain, bias), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log softmax probability of the labelled classes."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    rows, classes = logits.shape
    idx = np.asarray(labels, dtype=np.int64)
    if idx.shape != (rows,):
        raise ValueError(f"got {idx.shape[0] if idx.ndim else 1} labels for {rows} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= classes):
        raise IndexError(f"label out of range [0, {classes})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Tensor(-logp[np.arange(rows), idx].mean())

    def backward(g):
        p = np.exp(logp)
        p[np.arange(rows), idx] -= 1.0
        _accumulate_owned(logits, (float(g) / rows) * p)

    return _record(out, (logits,), backward)


# ---------------------------------------------------------------------------
# Parameter initialization and containers


def xavier_uniform(shape, rng: np.random.Generator) -> Tensor:
    """Xavier-uniform weight matrix; fan counts from the first two extents."""
    fan_in, fan_out = shape[0], shape[1] if len(shape) > 1 else shape[0]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """Minimal parameter container; children found by attribute walk."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    params[prefix + name] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{prefix}{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        params[f"{prefix}{name}.{i}"] = item
        return params

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None
