"""Reverse-mode differentiation over a linear tape.

Every primitive computes its forward value with numpy (float64) and, when a
tape is active and at least one input needs a gradient, appends a closure
that pushes the output gradient back into its inputs.  ``Tape.backward``
replays those closures in reverse order.  There is no graph engine: the tape
order *is* the topological order.
"""
from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("hsitrack_tape", default=None)


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class Var:
    """A float64 array that may carry a gradient."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar keeps model code readable
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def param(value, name: str | None = None) -> Var:
    return Var(value, requires_grad=True, name=name)


class Tape:
    """Ordered record of backward closures; use as a context manager."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._ops)

    def push(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def backward(self, loss: Var, params: Iterable[Var] = ()) -> None:
        """Accumulate d(loss)/d(var) into ``.grad`` of every var on the tape.

        ``params`` are zeroed first so that parameters the forward pass never
        touched still end up with an exact-zero gradient.  The tape is cleared
        afterwards.
        """
        if loss.value.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        for p in params:
            p.zero_grad()
        loss.grad = np.ones_like(loss.value)
        for fn in reversed(self._ops):
            fn()
        self._ops.clear()

    def clear(self) -> None:
        self._ops.clear()


def active_tape() -> Tape | None:
    return _ACTIVE.get()


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _record(out: Var, inputs: Sequence[Var], backward: Callable[[np.ndarray], None]) -> Var:
    tape = _ACTIVE.get()
    if tape is None or not any(v.requires_grad for v in inputs):
        return out
    out.requires_grad = True

    def run():
        if out.grad is not None:
            backward(out.grad)

    tape.push(run)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value + b.value)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _record(out, (a, b), back)


def sub(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value - b.value)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _record(out, (a, b), back)


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value * b.value)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.value, b.shape))

    return _record(out, (a, b), back)


def div(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value / b.value)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.value, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.value / (b.value * b.value), b.shape))

    return _record(out, (a, b), back)


def maximum(a, b) -> Var:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = _as_var(a), _as_var(b)
    pick_a = a.value >= b.value
    out = Var(np.where(pick_a, a.value, b.value))

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~pick_a, b.shape))

    return _record(out, (a, b), back)


def minimum(a, b) -> Var:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = _as_var(a), _as_var(b)
    pick_a = a.value <= b.value
    out = Var(np.where(pick_a, a.value, b.value))

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~pick_a, b.shape))

    return _record(out, (a, b), back)


def relu(x) -> Var:
    x = _as_var(x)
    on = x.value > 0
    out = Var(np.where(on, x.value, 0.0))
    return _record(out, (x,), lambda g: x._accum(g * on))


def absolute(x) -> Var:
    x = _as_var(x)
    sign = np.sign(x.value)
    out = Var(np.abs(x.value))
    return _record(out, (x,), lambda g: x._accum(g * sign))


def sigmoid(x) -> Var:
    x = _as_var(x)
    s = _sigmoid(x.value)
    out = Var(s)
    return _record(out, (x,), lambda g: x._accum(g * s * (1.0 - s)))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x) -> Var:
    x = _as_var(x)
    v = x.value
    out = Var(np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v))))
    return _record(out, (x,), lambda g: x._accum(g * _sigmoid(v)))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> Var:
    """tanh-approximated GELU (smooth, so finite differences behave)."""
    x = _as_var(x)
    v = x.value
    v2 = v * v
    inner = _GELU_C * v * (1.0 + 0.044715 * v2)
    t = np.tanh(inner)
    out = Var(0.5 * v * (1.0 + t))

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        x._accum(g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner))

    return _record(out, (x,), back)


def log(x) -> Var:
    x = _as_var(x)
    out = Var(np.log(x.value))
    return _record(out, (x,), lambda g: x._accum(g / x.value))


def square(x) -> Var:
    x = _as_var(x)
    out = Var(x.value * x.value)
    return _record(out, (x,), lambda g: x._accum(2.0 * g * x.value))


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def sum_(x, axis=None, keepdims: bool = False) -> Var:
    x = _as_var(x)
    out = Var(np.sum(x.value, axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _record(out, (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Var:
    x = _as_var(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape) -> Var:
    x = _as_var(x)
    out = Var(x.value.reshape(shape))
    return _record(out, (x,), lambda g: x._accum(g.reshape(x.shape)))


def transpose(x, axes) -> Var:
    x = _as_var(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Var(np.transpose(x.value, axes))
    return _record(out, (x,), lambda g: x._accum(np.transpose(g, inv)))


def concat(xs: Sequence, axis: int) -> Var:
    xs = [_as_var(x) for x in xs]
    out = Var(np.concatenate([x.value for x in xs], axis=axis))
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def back(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                x._accum(g[tuple(idx)])

    return _record(out, xs, back)


def take(x, index) -> Var:
    """Basic or advanced indexing ``x[index]`` with scatter-add backward."""
    x = _as_var(x)
    out = Var(x.value[index])

    def back(g):
        full = np.zeros_like(x.value)
        np.add.at(full, index, g)
        x._accum(full)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Var:
    """``a @ b`` with numpy batching rules on leading axes."""
    a, b = _as_var(a), _as_var(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    out = Var(a.value @ b.value)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))

    return _record(out, (a, b), back)


def linear_apply(x, w, b=None) -> Var:
    """``x @ w + b`` for x of shape (..., M, K), w (K, d), b (d,) or (1, d)."""
    x, w = _as_var(x), _as_var(w)
    if w.ndim != 2 or x.ndim < 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear_apply: x {x.shape} and w {w.shape} do not conform")
    if b is not None:
        b = _as_var(b)
        if b.value.size != w.shape[1]:
            raise DimensionError(f"linear_apply: bias {b.shape} does not match w {w.shape}")
    y = x.value @ w.value
    if b is not None:
        y = y + b.value.reshape(-1)
    out = Var(y)

    def back(g):
        if x.requires_grad:
            x._accum(g @ w.value.T)
        if w.requires_grad:
            k = x.shape[-1]
            w._accum(x.value.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
        if b is not None and b.requires_grad:
            b._accum(g.reshape(-1, g.shape[-1]).sum(axis=0).reshape(b.shape))

    return _record(out, (x, w) if b is None else (x, w, b), back)


def softmax(x, axis: int = -1) -> Var:
    x = _as_var(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Var(s)

    def back(g):
        x._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _record(out, (x,), back)


LN_EPS = 1e-5


def layer_norm(x, gain, shift, eps: float = LN_EPS) -> Var:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, shift = _as_var(x), _as_var(gain), _as_var(shift)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs at least 2 features, got {d}")
    if gain.value.size != d or shift.value.size != d:
        raise DimensionError(f"layer_norm: gain {gain.shape} / shift {shift.shape} vs features {d}")
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv, sv = gain.value.reshape(-1), shift.value.reshape(-1)
    out = Var(xhat * gv + sv)

    def back(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, d).sum(axis=0).reshape(gain.shape))
        if shift.requires_grad:
            shift._accum(g.reshape(-1, d).sum(axis=0).reshape(shift.shape))
        if x.requires_grad:
            gx = g * gv
            x._accum(inv * (gx - gx.mean(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _record(out, (x, gain, shift), back)
