"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` records every operation executed while it is active; ``backward``
replays the record in reverse to accumulate gradients into the leaves.  Ops
executed with no active tape are plain numpy computations wrapped in a
``Tensor``, so inference-style code pays no graph overhead.

All values are 64-bit floats.  Tensors that are inputs to a recorded op must
not be mutated in place before ``backward`` runs; nothing in this module's
public API does so.
"""

from __future__ import annotations

import weakref
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the op's shape rule."""


class DomainError(ValueError):
    """Input value outside the op's mathematical domain."""


class TapeError(RuntimeError):
    """Backward invoked with a loss the tape did not record."""


class Tensor:
    """A dense n-dimensional float64 array, optionally carrying a gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._tape: "weakref.ref[Tape] | None" = None

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
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A constant view of the same values, cut off from any tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; scalars and arrays are promoted to constant tensors.
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

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


class Tape:
    """Ordered record of ops; append order is already topological.

    Use as a context manager::

        with Tape() as tape:
            loss = f(params)
        backward(loss, tape)
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        # recorded tensors keep this weakref token, not the tape itself, so a
        # dropped tape frees its graph by refcount instead of waiting on the
        # cycle collector
        self._ref = weakref.ref(self)

    def __len__(self) -> int:
        return len(self._entries)

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise TapeError("a tape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE
        _ACTIVE = None


_ACTIVE: Tape | None = None


def active_tape() -> Tape | None:
    return _ACTIVE


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    """A tensor that never takes gradients."""
    return Tensor(value)


def parameter(value) -> Tensor:
    """A leaf tensor marked as trainable."""
    return Tensor(value, requires_grad=True)


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    tape = _ACTIVE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape._ref
        tape._entries.append((out, inputs, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires-grad tensor the tape touched.

    Reachable tensors get d(loss)/d(tensor); recorded-but-unreachable ones get
    an exact zero of their own shape.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape._ref:
        raise TapeError("loss was not recorded on this tape")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape._entries):
        if out.grad is None:
            continue
        grads = backward_fn(out.grad)
        for tensor, grad in zip(inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.grad is None:
                # backward closures never mutate gradient arrays in place,
                # so storing a view of the upstream gradient is safe
                tensor.grad = grad
            else:
                tensor.grad = tensor.grad + grad
    for _, inputs, _ in tape._entries:
        for tensor in inputs:
            if tensor.requires_grad and tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; operands broadcast under numpy rules."""
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0
    return _record(out, (x,), lambda g: (np.where(mask, g, 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data))
    return _record(out, (x,), lambda g: (g * out.data,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        worst = float(x.data.min())
        raise DomainError(f"log of non-positive value (min entry {worst})")
    out = Tensor(np.log(x.data))
    return _record(out, (x,), lambda g: (g / x.data,))


def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    axes = _norm_axis(axis, x.ndim)
    out = Tensor(x.data.sum(axis=axes, keepdims=keepdims))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _record(out, (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape) / count,)

    return _record(out, (x,), bwd)


def logsumexp(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    m = np.max(x.data, axis=axes, keepdims=True)
    shifted = np.exp(x.data - m)
    total = shifted.sum(axis=axes, keepdims=True)
    val = m + np.log(total)
    soft = shifted / total
    out = Tensor(val if keepdims else val.reshape(
        tuple(n for i, n in enumerate(x.shape) if i not in axes)))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * soft,)

    return _record(out, (x,), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements; operands must share a shape."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    out = Tensor(np.mean(diff * diff))
    scale = 2.0 / diff.size

    def bwd(g):
        base = (g * scale) * diff
        return base, -base

    return _record(out, (a, b), bwd)


def clamp_max(x: Tensor, cap: float) -> Tensor:
    """min(x, cap); gradient is zero on entries at or above the cap."""
    mask = x.data < cap
    out = Tensor(np.where(mask, x.data, cap))
    return _record(out, (x,), lambda g: (np.where(mask, g, 0.0),))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: {x.shape} does not broadcast to {shape}") from None
    out = Tensor(data)
    return _record(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    axis = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim:
            raise ShapeError(f"concat: ranks differ ({ts[0].shape} vs {t.shape})")
        for i in range(t.ndim):
            if i != axis and t.shape[i] != ts[0].shape[i]:
                raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} "
                                 f"differ on non-concat axis {i}")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(ts)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return _record(out, tuple(ts), bwd)


def index_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds into the source."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(x.data[idx])

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ ({a.shape} @ {b.shape})")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd)


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """2-D cross-correlation, stride 1, zero-padded to keep spatial size.

    ``x`` is (N, H, W, C_in), ``kernel`` is (k, k, C_in, C_out) with odd k.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N, H, W, C), got {x.shape}")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"conv2d kernel must be (k, k, C_in, C_out), got {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 != 1:
        raise ShapeError(f"conv2d kernel size must be odd, got {k}")
    if kernel.shape[2] != x.shape[3]:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, "
                         f"kernel expects {kernel.shape[2]}")
    n, h, w, c_in = x.shape
    c_out = kernel.shape[3]
    pad = k // 2

    padded = np.zeros((n, h + 2 * pad, w + 2 * pad, c_in))
    padded[:, pad:pad + h, pad:pad + w, :] = x.data
    # im2col matrix ordered (k, k, C_in), filled by k*k contiguous slab copies
    cols = np.empty((n, h, w, k * k, c_in))
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, di * k + dj, :] = padded[:, di:di + h, dj:dj + w, :]
    cols = cols.reshape(n * h * w, k * k * c_in)
    kmat = kernel.data.reshape(k * k * c_in, c_out)
    out = Tensor((cols @ kmat).reshape(n, h, w, c_out))

    def bwd(g):
        gmat = g.reshape(n * h * w, c_out)
        gk = (cols.T @ gmat).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gmat @ kmat.T).reshape(n, h, w, k, k, c_in)
            gp = np.zeros_like(padded)
            for di in range(k):
                for dj in range(k):
                    gp[:, di:di + h, dj:dj + w, :] += dcols[:, :, :, di, dj, :]
            gx = gp[:, pad:pad + h, pad:pad + w, :]
        return gx, gk

    return _record(out, (x, kernel), bwd)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling on (N, H, W, C); H and W must be even."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2 needs even spatial dims, got {h}x{w}")
    pooled = reshape(x, (n, h // 2, 2, w // 2, 2, c))
    return mean(pooled, axis=(2, 4))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along one axis, built from exp and logsumexp."""
    return exp(sub(x, logsumexp(x, axis=axis, keepdims=True)))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5) -> float:
    """Max relative gap between analytic and central-difference gradients.

    ``f`` must map ``point`` to a scalar tensor.  The discrepancy at each
    coordinate is |analytic - numeric| / max(1, |analytic|); the max over
    coordinates is returned.
    """
    point.requires_grad = True
    point.grad = None
    point.data = np.ascontiguousarray(point.data)
    with Tape() as tape:
        y = f(point)
    if y.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got output {y.shape}")
    backward(y, tape)
    analytic = point.grad.copy() if point.grad is not None else np.zeros_like(point.data)

    flat = point.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(point).item()
        flat[i] = orig - eps
        lo = f(point).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)
    numeric = numeric.reshape(point.shape)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_multi(f: Callable[[], Tensor], tensors: Sequence[Tensor],
                     eps: float = 1e-5) -> float:
    """grad_check jointly over several tensors.

    ``f`` takes no arguments and reads the tensors' current values; the
    returned discrepancy is the max over every coordinate of every tensor.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
        t.data = np.ascontiguousarray(t.data)
    with Tape() as tape:
        y = f()
    if y.data.size != 1:
        raise ShapeError(f"grad_check_multi needs a scalar function, got output {y.shape}")
    backward(y, tape)
    analytic = np.concatenate(
        [(t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
         for t in tensors])

    numeric = np.zeros_like(analytic)
    i = 0
    for t in tensors:
        flat = t.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = f().item()
            flat[j] = orig - eps
            lo = f().item()
            flat[j] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
            i += 1

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_sample(f: Callable[[], Tensor], tensors: Sequence[Tensor],
                      coords_per_tensor: int = 3, eps: float = 1e-5,
                      seed: int = 0) -> float:
    """grad_check_multi restricted to random coordinates of each tensor.

    Full-coordinate sweeps are quadratic in parameter count; sampling keeps
    whole-model objectives checkable.  One backward supplies every analytic
    partial; central differences probe ``coords_per_tensor`` random
    coordinates per tensor and the max relative gap over probes is returned.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
        t.data = np.ascontiguousarray(t.data)
    with Tape() as tape:
        y = f()
    if y.data.size != 1:
        raise ShapeError(f"grad_check_sample needs a scalar function, got output {y.shape}")
    backward(y, tape)

    worst = 0.0
    for t in tensors:
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        flat = t.data.reshape(-1)
        n = min(coords_per_tensor, flat.size)
        for j in rng.choice(flat.size, size=n, replace=False):
            orig = flat[j]
            flat[j] = orig + eps
            hi = f().item()
            flat[j] = orig - eps
            lo = f().item()
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * eps)
            gap = abs(analytic[j] - numeric) / max(1.0, abs(analytic[j]))
            worst = max(worst, gap)
    return worst
