"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Values live in contiguous numpy arrays (row major; images use the NCHW
convention). Every operation whose output can influence a gradient is
recorded on a thread-local tape in execution order, so the tape is
topologically sorted by construction. ``backward`` walks the tape once in
reverse, accumulates gradients into the participating leaf tensors, and then
clears the tape; a fresh forward pass therefore always starts from an empty
tape. Tensors are treated as immutable once created (training updates go
through ``Tensor.data`` between steps, never mid-graph).

All arithmetic happens in 64-bit floats. This is deliberate: the package is
validated with central finite differences, and the extra precision is what
makes those checks tight.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "TapeEntry",
    "as_tensor",
    "active_tape",
    "no_grad",
    "grad_enabled",
    "backward",
    "set_finite_checks",
    "concat",
    "matmul",
    "conv2d",
    "max_pool2d",
    "upsample_nearest2d",
    "relu",
    "sigmoid",
    "silu",
    "softmax",
    "exp",
    "log",
    "sqrt",
]


class TapeEntry:
    """One recorded operation: output node, input nodes, and a backward rule.

    ``backward`` maps the gradient at the output to a tuple of gradients
    aligned with ``inputs`` (``None`` for inputs that need no gradient).
    """

    __slots__ = ("op", "output", "inputs", "backward")

    def __init__(self, op: str, output: "Tensor", inputs: tuple["Tensor", ...],
                 backward: Callable[[np.ndarray], tuple]):
        self.op = op
        self.output = output
        self.inputs = inputs
        self.backward = backward

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"<TapeEntry {self.op} out={id(self.output):#x}>"


class Tape:
    """Ordered record of operations for one reverse pass (single-threaded)."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_state = threading.local()


def _thread_state():
    if not hasattr(_state, "tape"):
        _state.tape = Tape()
        _state.grad_enabled = True
        _state.finite_checks = False
    return _state


def active_tape() -> Tape:
    """The calling thread's tape. Each thread records independently."""
    return _thread_state().tape


def grad_enabled() -> bool:
    return _thread_state().grad_enabled


def set_finite_checks(enabled: bool) -> None:
    """Debug mode: verify every op output is finite (NaN/Inf raises)."""
    _thread_state().finite_checks = enabled


class no_grad:
    """Context manager that disables tape recording (used for sampling)."""

    def __enter__(self):
        st = _thread_state()
        self._prev = st.grad_enabled
        st.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _thread_state().grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "produced")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        # True when this tensor was created by a recorded op (non-leaf).
        self.produced = False

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
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic operators. Scalars and numpy arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(value) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Create the output tensor and record the op if gradients are live."""
    st = _thread_state()
    if st.finite_checks and not np.all(np.isfinite(out_data)):
        raise ContractError(f"non-finite values produced by op '{op}'")
    out = Tensor(out_data)
    if st.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.produced = True
        st.tape.record(TapeEntry(op, out, inputs, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Reverse pass: fill ``grad`` on every requires_grad leaf under ``loss``.

    The loss must be a scalar produced on the calling thread's tape. The
    tape is consumed: after this call it is empty, whether or not the walk
    raised. Leaf gradients accumulate across calls until ``zero_grad``.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(
            f"backward needs a scalar loss, got shape {loss.shape}")
    if not (loss.requires_grad and loss.produced):
        raise ContractError(
            "loss is detached: it was not produced by recorded operations")
    tape = active_tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for entry in reversed(tape.entries):
            gout = grads.pop(id(entry.output), None)
            if gout is None:
                continue
            gins = entry.backward(gout)
            for tensor, gin in zip(entry.inputs, gins):
                if gin is None or not tensor.requires_grad:
                    continue
                if tensor.produced:
                    acc = grads.get(id(tensor))
                    grads[id(tensor)] = gin if acc is None else acc + gin
                else:
                    tensor.grad = gin.copy() if tensor.grad is None \
                        else tensor.grad + gin
    finally:
        tape.clear()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape))
                 if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _record("mul", out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record("div", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    if not isinstance(exponent, (int, float)):
        raise ContractError("power supports scalar exponents only")
    p = float(exponent)
    out = a.data ** p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _record("pow", out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0.0),)

    return _record("relu", out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a: Tensor) -> Tensor:
    # x * sigmoid(x); derivative s + x*s*(1-s)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s

    def bwd(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return _record("silu", out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", out, (a,), bwd)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        return (np.broadcast_to(g, a.shape),)

    return _record("sum", out, (a,), bwd)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else \
        np.prod([a.shape[ax % a.ndim]
                 for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bwd(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        return (np.broadcast_to(g, a.shape),)

    return _record("mean", out, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out = a.data.transpose(axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inverse),)

    return _record("transpose", out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(tensors)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return _record("concat", out, tensors, bwd)


# ---------------------------------------------------------------------------
# matrix product
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics on the leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            "matmul inner dimensions differ: "
            f"a axis {a.ndim - 1} has size {a.shape[-1]}, "
            f"b axis {b.ndim - 2} has size {b.shape[-2]}")
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", out, (a, b), bwd)


# ---------------------------------------------------------------------------
# image ops
# ---------------------------------------------------------------------------

def conv2d(inp: Tensor, kernel: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input against [Cout, Cin, kh, kw] kernel.

    Implemented as window extraction plus one tensordot so the heavy lifting
    stays inside BLAS. Differentiable with respect to both operands.
    """
    if inp.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-D input and kernel, got {inp.ndim}-D input "
            f"and {kernel.ndim}-D kernel")
    n, cin, h, w = inp.shape
    cout, kcin, kh, kw = kernel.shape
    if cin != kcin:
        raise DimensionError(
            f"conv2d channel mismatch: input axis 1 has size {cin}, "
            f"kernel axis 1 has size {kcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError(f"conv2d kernel sides must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ContractError("conv2d needs stride >= 1 and padding >= 0")
    if (h + 2 * padding - kh) % stride or (w + 2 * padding - kw) % stride:
        raise ContractError(
            f"conv2d output size is not integral for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    padded = inp.data if padding == 0 else np.pad(
        inp.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # windows: [n, cin, ho, wo, kh, kw]
    out = np.tensordot(windows, kernel.data,
                       axes=([1, 4, 5], [1, 2, 3]))  # [n, ho, wo, cout]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bwd(g):
        # g: [n, cout, ho, wo]
        gk = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        if stride == 1 and padding < kh and padding < kw:
            # Input gradient is a full correlation with the flipped kernel.
            ph, pw = kh - 1 - padding, kw - 1 - padding
            gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
            gwin = np.lib.stride_tricks.sliding_window_view(
                gp, (kh, kw), axis=(2, 3))
            flipped = kernel.data[:, :, ::-1, ::-1]
            gx = np.tensordot(gwin, flipped, axes=([1, 4, 5], [0, 2, 3]))
            return np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), gk
        # General case: scatter-add window gradients back into place.
        gwin = np.tensordot(g, kernel.data, axes=([1], [0]))
        gwin = np.ascontiguousarray(gwin.transpose(0, 3, 1, 2, 4, 5))
        gpad = np.zeros_like(padded)
        for i in range(kh):
            hend = i + stride * ho
            for j in range(kw):
                wend = j + stride * wo
                gpad[:, :, i:hend:stride, j:wend:stride] += \
                    gwin[:, :, :, :, i, j]
        if padding:
            gpad = gpad[:, :, padding:padding + h, padding:padding + w]
        return gpad, gk

    return _record("conv2d", out, (inp, kernel), bwd)


def max_pool2d(a: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first maximum."""
    n, c, h, w = a.shape
    if h % 2 or w % 2:
        raise ContractError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = a.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(n, c, h, w),)

    return _record("max_pool2d", out, (a,), bwd)


def upsample_nearest2d(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    n, c, h, w = a.shape
    out = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record("upsample_nearest2d", out, (a,), bwd)
