"""Dense real tensors with a reverse-mode differentiation tape.

Every differentiable operation in the package bottoms out in the primitives
defined here: broadcast elementwise arithmetic, matrix products, real-input
FFTs, framing/overlap-add, and 1-D causal convolution.  Operations execute
eagerly on numpy arrays and, whenever an input is being tracked, append a
record to the calling thread's tape.  ``backward`` replays that tape in
reverse, which visits nodes in reverse topological order because records are
appended in execution order.

Tensors are immutable after creation and safe to share across threads; each
thread owns its own tape, so independent pipelines (per clip, per spectrogram
scale) may run concurrently without locking.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ShapeError

_LN10 = math.log(10.0)

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Set the scalar type used for new tensors (float64 unless opted out).

    Gradient checks are only reliable in double precision; float32 is an
    opt-in mode for synthesis-only workloads.
    """
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported scalar type: {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class GraphTape:
    """Ordered record of executed primitives for one pipeline evaluation.

    Each record holds the operation's input tensors, its output tensor and a
    closure mapping the output gradient to input gradients.  Replaying the
    records in reverse visits every node exactly once, in reverse topological
    order, because the forward pass appended them in execution order.
    """

    __slots__ = ("records",)

    def __init__(self) -> None:
        self.records: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []

    def record(self, inputs: tuple["Tensor", ...], output: "Tensor",
               backward: Callable) -> None:
        output._tracked = True
        self.records.append((inputs, output, backward))

    def reset(self) -> None:
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)


_local = threading.local()


def _tape() -> GraphTape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = GraphTape()
        _local.tape = tape
    return tape


def current_tape() -> GraphTape:
    """The calling thread's tape (created on first use)."""
    return _tape()


class Tensor:
    """Dense real n-dimensional array, double precision by default.

    A tensor participates in the computation graph only if it was created
    with ``requires_grad=True`` or produced by an operation on a tracked
    tensor; untracked tensors are plain array wrappers and never incur tape
    overhead.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype  # keep an explicit float32 opt-in intact
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tracked = self.requires_grad

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

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # -- operator sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return pow(self, other)

    def __rpow__(self, other):
        return pow(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method sugar ----------------------------------------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def log10(self):
        return log10(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return abs(self)

    def sigmoid(self):
        return sigmoid(self)

    def clamp_min(self, floor):
        return clamp_min(self, floor)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap array-likes as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _record(inputs: Sequence[Tensor], out: Tensor, backward_fn: Callable) -> Tensor:
    if any(t._tracked for t in inputs):
        _tape().record(tuple(inputs), out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as err:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from err


def _first_offender(mask: np.ndarray) -> tuple:
    return tuple(int(i) for i in np.argwhere(mask)[0])


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record((a, b), out, bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record((a, b), out, bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _record((a, b), out, bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = Tensor(a.data / b.data)

    def bwd(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out.data / b.data, b.shape))

    return _record((a, b), out, bwd)


def pow(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "pow")
    if b._tracked and np.any(a.data <= 0):
        raise DomainError(
            f"pow: non-positive base at index {_first_offender(a.data <= 0)} "
            "with differentiable exponent")
    out = Tensor(a.data ** b.data)

    def bwd(g):
        ga = _unbroadcast(g * b.data * a.data ** (b.data - 1.0), a.shape)
        gb = None
        if b._tracked:
            gb = _unbroadcast(g * out.data * np.log(a.data), b.shape)
        return ga, gb

    return _record((a, b), out, bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record((a,), out, lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    return _record((a,), out, lambda g: (g * out.data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError(f"log: negative value at index {_first_offender(a.data < 0)}")
    out = Tensor(np.log(a.data))
    return _record((a,), out, lambda g: (g / a.data,))


def log10(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError(f"log10: negative value at index {_first_offender(a.data < 0)}")
    out = Tensor(np.log10(a.data))
    return _record((a,), out, lambda g: (g / (a.data * _LN10),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError(f"sqrt: negative value at index {_first_offender(a.data < 0)}")
    out = Tensor(np.sqrt(a.data))

    def bwd(g):
        # subgradient 0 at the origin keeps silent signals NaN-free
        denom = np.where(out.data > 0, 2.0 * out.data, 1.0)
        return (np.where(out.data > 0, g / denom, 0.0),)

    return _record((a,), out, bwd)


def abs(a) -> Tensor:  # noqa: A001 - mirrors the op-kind name
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))
    return _record((a,), out, lambda g: (g * np.sign(a.data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_val = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(out_val)
    return _record((a,), out, lambda g: (g * out.data * (1.0 - out.data),))


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    floor = float(floor)
    out = Tensor(np.maximum(a.data, floor))
    # gradient passes on the closed side (a >= floor)
    return _record((a,), out, lambda g: (np.where(a.data >= floor, g, 0.0),))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    lo, hi = float(lo), float(hi)
    out = Tensor(np.clip(a.data, lo, hi))

    def bwd(g):
        keep = (a.data >= lo) & (a.data <= hi)
        return (np.where(keep, g, 0.0),)

    return _record((a,), out, bwd)


def minimum_with_zero(a) -> Tensor:
    """min(0, a), differentiable; used by the hinge losses."""
    return neg(clamp_min(neg(a), 0.0))


_UNARY_KINDS = {
    "exp": exp,
    "log": log,
    "log10": log10,
    "sqrt": sqrt,
    "sigmoid": sigmoid,
    "abs": abs,
}
_BINARY_KINDS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "pow": pow,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise primitive by name.

    ``kind`` is one of add, sub, mul, div, pow, exp, log, log10, sqrt,
    clamp-min, sigmoid, abs.  Binary kinds and clamp-min require ``b``.
    """
    if kind in _BINARY_KINDS:
        if b is None:
            raise ValueError(f"elementwise {kind!r} needs two operands")
        return _BINARY_KINDS[kind](a, b)
    if kind == "clamp-min" or kind == "clamp_min":
        if b is None:
            raise ValueError("elementwise clamp-min needs a floor")
        return clamp_min(a, float(b.data) if isinstance(b, Tensor) else float(b))
    if kind in _UNARY_KINDS:
        if b is not None:
            raise ValueError(f"elementwise {kind!r} takes one operand")
        return _UNARY_KINDS[kind](a)
    raise ValueError(f"unknown elementwise kind: {kind!r}")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record((a,), out, bwd)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record((a,), out, lambda g: (g.reshape(a.shape),))


def matmul(a, b) -> Tensor:
    """Matrix product with the usual 1-D promotion rules."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 and b.ndim == 1:
        return sum(mul(a, b))
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, -1)), b), (-1,))
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (-1, 1))), (-1,))
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 1-D or 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record((a, b), out, bwd)


# ---------------------------------------------------------------------------
# spectral primitives (complex values as trailing real/imag planes)
# ---------------------------------------------------------------------------

def _require_pow2(n: int, op: str) -> None:
    if n < 2 or n & (n - 1):
        raise ShapeError(f"{op}: transform size {n} is not a power of two")


def rfft(a, n: int) -> Tensor:
    """Real-input FFT along the last axis, zero-padded to ``n``.

    Returns a tensor of shape ``(..., 2, n // 2 + 1)`` holding the real and
    imaginary planes.  The backward pass is the exact adjoint transform.
    """
    a = as_tensor(a)
    n = int(n)
    _require_pow2(n, "rfft")
    length = a.shape[-1]
    if length > n:
        raise ShapeError(f"rfft: input length {length} exceeds transform size {n}")
    spec = np.fft.rfft(a.data, n=n, axis=-1)
    out = Tensor(np.stack([spec.real, spec.imag], axis=-2))

    def bwd(g):
        gc = g[..., 0, :] + 1j * g[..., 1, :]
        full = np.zeros(gc.shape[:-1] + (n,), dtype=complex)
        full[..., : n // 2 + 1] = gc
        grad = n * np.fft.ifft(full, axis=-1).real
        return (grad[..., :length],)

    return _record((a,), out, bwd)


def irfft(z, n: int) -> Tensor:
    """Inverse real FFT of a ``(..., 2, n // 2 + 1)`` spectrum tensor."""
    z = as_tensor(z)
    n = int(n)
    _require_pow2(n, "irfft")
    if z.shape[-2] != 2 or z.shape[-1] != n // 2 + 1:
        raise ShapeError(f"irfft: expected (..., 2, {n // 2 + 1}) planes, got {z.shape}")
    spec = z.data[..., 0, :] + 1j * z.data[..., 1, :]
    out = Tensor(np.fft.irfft(spec, n=n, axis=-1))

    def bwd(g):
        gspec = np.fft.rfft(g, n=n, axis=-1)
        scale = np.full(n // 2 + 1, 2.0 / n)
        scale[0] = 1.0 / n
        scale[-1] = 1.0 / n
        gz = np.stack([gspec.real * scale, gspec.imag * scale], axis=-2)
        return (gz,)

    return _record((z,), out, bwd)


def complex_abs(z) -> Tensor:
    """Magnitude of a spectrum tensor: ``(..., 2, B) -> (..., B)``.

    The subgradient at exact zeros is zero, which keeps fully silent frames
    from poisoning a backward pass with NaNs.
    """
    z = as_tensor(z)
    if z.ndim < 2 or z.shape[-2] != 2:
        raise ShapeError(f"complex_abs: expected (..., 2, B) planes, got {z.shape}")
    re, im = z.data[..., 0, :], z.data[..., 1, :]
    mag = np.hypot(re, im)
    out = Tensor(mag)

    def bwd(g):
        safe = np.where(mag > 0, mag, 1.0)
        scale = np.where(mag > 0, g / safe, 0.0)
        return (np.stack([re * scale, im * scale], axis=-2),)

    return _record((z,), out, bwd)


# ---------------------------------------------------------------------------
# framing, overlap-add, delay, causal FIR
# ---------------------------------------------------------------------------

def frame(a, frame_len: int, hop: int, n_frames: int, pad_left: int) -> Tensor:
    """Gather ``n_frames`` windows of ``frame_len`` samples at ``hop`` spacing.

    Frame ``t`` covers input samples ``[t*hop - pad_left, t*hop - pad_left +
    frame_len)``; out-of-range samples read as zero.  The adjoint scatters
    gradients back with the same geometry.
    """
    a = as_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"frame: expected a 1-D signal, got shape {a.shape}")
    length = a.shape[0]
    total = (n_frames - 1) * hop + frame_len
    padded = np.zeros(total, dtype=a.data.dtype)
    lo = pad_left
    hi = min(total, pad_left + length)
    if hi > lo:
        padded[lo:hi] = a.data[: hi - lo]
    view = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[::hop]
    out = Tensor(view[:n_frames].copy())

    def bwd(g):
        buf = np.zeros(total)
        for t in range(n_frames):
            buf[t * hop: t * hop + frame_len] += g[t]
        grad = np.zeros(length)
        if hi > lo:
            grad[: hi - lo] = buf[lo:hi]
        return (grad,)

    return _record((a,), out, bwd)


def overlap_add(frames_t, hop: int, out_len: int, pad_left: int) -> Tensor:
    """Scatter-add ``(T, frame_len)`` frames into a signal of ``out_len``.

    Exact adjoint of :func:`frame` with matching geometry.
    """
    frames_t = as_tensor(frames_t)
    if frames_t.ndim != 2:
        raise ShapeError(f"overlap_add: expected (T, frame_len), got {frames_t.shape}")
    n_frames, frame_len = frames_t.shape
    total = max((n_frames - 1) * hop + frame_len, pad_left + out_len)
    buf = np.zeros(total, dtype=frames_t.data.dtype)
    for t in range(n_frames):
        buf[t * hop: t * hop + frame_len] += frames_t.data[t]
    out = Tensor(buf[pad_left: pad_left + out_len])

    def bwd(g):
        gpad = np.zeros(total)
        gpad[pad_left: pad_left + out_len] = g
        grad = np.empty((n_frames, frame_len))
        for t in range(n_frames):
            grad[t] = gpad[t * hop: t * hop + frame_len]
        return (grad,)

    return _record((frames_t,), out, bwd)


def delay(a, shift: int) -> Tensor:
    """Shift a 1-D signal right by ``shift`` samples (zeros enter, tail drops)."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"delay: expected a 1-D signal, got shape {a.shape}")
    shift = int(shift)
    if shift < 0:
        raise ValueError("delay: shift must be non-negative")
    length = a.shape[0]
    out_val = np.zeros(length)
    if shift < length:
        out_val[shift:] = a.data[: length - shift]
    out = Tensor(out_val)

    def bwd(g):
        grad = np.zeros(length)
        if shift < length:
            grad[: length - shift] = g[shift:]
        return (grad,)

    return _record((a,), out, bwd)


def causal_fir(a, taps) -> Tensor:
    """Causal FIR filter: ``y[t] = sum_l taps[l] * a[t - l]``, same length as ``a``.

    Differentiable in both the signal and the taps.
    """
    from scipy.signal import fftconvolve

    a, taps = as_tensor(a), as_tensor(taps)
    if a.ndim != 1 or taps.ndim != 1:
        raise ShapeError("causal_fir: signal and taps must be 1-D")
    length = a.shape[0]
    n_taps = taps.shape[0]
    out = Tensor(fftconvolve(a.data, taps.data)[:length])

    def bwd(g):
        ga = fftconvolve(g, taps.data[::-1])[n_taps - 1: n_taps - 1 + length]
        gw = fftconvolve(g, a.data[::-1])[length - 1: length - 1 + n_taps]
        return ga, gw

    return _record((a, taps), out, bwd)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-replay the calling thread's tape from a scalar loss.

    Returns a map from every gradient-requiring tensor reached by the walk to
    its gradient (also accumulated into ``tensor.grad``).  The tape is reset
    afterwards; tensors that never joined the graph simply do not appear in
    the map.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor loss")
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = _tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {id(loss): loss} if loss.requires_grad else {}
    result: dict[Tensor, np.ndarray] = {}
    for inputs, output, bwd in reversed(tape.records):
        g = grads.pop(id(output), None)
        if g is None:
            continue
        # a popped output is fully accumulated: all of its consumers sit
        # later on the tape and were already visited
        if output.requires_grad:
            result[output] = g
        leaves.pop(id(output), None)
        for tensor, grad in zip(inputs, bwd(g)):
            if grad is None or not tensor._tracked:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
                if tensor.requires_grad:
                    leaves[key] = tensor
    for key, tensor in leaves.items():
        result[tensor] = grads[key]
    for tensor, grad in result.items():
        grad = np.asarray(grad, dtype=tensor.data.dtype).reshape(tensor.shape)
        result[tensor] = grad
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad
    tape.reset()
    return result
