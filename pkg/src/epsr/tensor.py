"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value in the engine is a ``Tensor`` holding a (batch, channel,
height, width) float array plus an optional gradient buffer.  Operations
record their backward rules onto the innermost active ``GradTape``;
``backward`` replays the tape in reverse to accumulate gradients.

All arithmetic runs in the dtype of its inputs: float32 is the working
precision, float64 is used by the finite-difference gradient checks.
Summation orders are fixed so repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """Non-finite values entered a numeric operation."""


class ConfigError(ValueError):
    """An operation parameter is outside its legal range."""


class TapeError(RuntimeError):
    """Backward pass requested on an empty or mismatched tape."""


class Tensor:
    """A dense (N, C, H, W) array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (N,C,H,W); got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Build a tensor, defaulting to float32 and reshaping scalars to (1,1,1,1)."""
    arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1, 1)
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)


# ---------------------------------------------------------------------------
# Tape machinery
# ---------------------------------------------------------------------------

class GradTape:
    """Ordered record of operations for one forward pass.

    Use as a context manager around the forward computation; ``backward``
    then replays the records in reverse.  The tape is append-only during
    recording and empty after ``reset``.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._records.append((out, inputs, backward_fn))

    def reset(self) -> None:
        self._records.clear()

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape context exited out of order"


_TAPE_STACK: list[GradTape] = []


def _finish(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if out.requires_grad and _TAPE_STACK:
        _TAPE_STACK[-1].record(out, inputs, backward_fn)
    return out


def backward(loss: Tensor, tape: GradTape) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from ``loss``.

    Gradients accumulate additively across fan-out.  The loss must be a
    scalar-shaped (1,1,1,1) tensor recorded on ``tape``.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"loss must have shape (1,1,1,1), got {loss.shape}")
    if len(tape) == 0:
        raise TapeError("backward on an empty tape: the loss is detached")
    loss.grad = np.ones((1, 1, 1, 1), dtype=loss.data.dtype)
    for out, inputs, backward_fn in reversed(tape._records):
        if out.grad is None:
            continue
        grads = backward_fn(out.grad)
        for inp, g in zip(inputs, grads):
            if inp.requires_grad and g is not None:
                inp.accumulate_grad(g)


def _any_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes that were broadcast up from ``shape``."""
    axes = tuple(i for i, (s, d) in enumerate(zip(shape, g.shape)) if s == 1 and d > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, dilation: int) -> np.ndarray:
    """Unfold a padded (N,C,Hp,Wp) array into (N, C*kh*kw, ho*wo) columns.

    Filled with kh*kw contiguous slice copies, which is much faster than a
    generic strided-window reshape.
    """
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i * dilation:i * dilation + ho,
                                  j * dilation:j * dilation + wo]
    return cols.reshape(n, c * kh * kw, ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *,
           padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding, stride 1, optional dilation."""
    if padding < 0:
        raise ConfigError(f"padding must be >= 0, got {padding}")
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    n, cin, h, w = x.shape
    cout, win, kh, kw = weight.shape
    if cin != win:
        raise ShapeError(f"input has {cin} channels but weight expects {win}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ShapeError(f"bias must be (1,{cout},1,1), got {bias.shape}")
    if not x.all_finite() or not weight.all_finite():
        raise NumericError("conv2d received non-finite values")
    ho = h + 2 * padding - dilation * (kh - 1)
    wo = w + 2 * padding - dilation * (kw - 1)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be {ho}x{wo} for input {h}x{w}")

    dt = x.data.dtype
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=dt)
        xp[:, :, padding:padding + h, padding:padding + w] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, ho, wo, dilation)
    w2 = weight.data.reshape(cout, cin * kh * kw).astype(dt, copy=False)
    out = np.matmul(w2[None, :, :], cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out += bias.data
    result = Tensor(out, requires_grad=_any_grad(x, weight) or
                    (bias is not None and bias.requires_grad))

    def _backward(g: np.ndarray):
        g2 = g.reshape(n, cout, ho * wo)
        dx = dw = db = None
        if weight.requires_grad:
            dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if x.requires_grad:
            dcols = np.matmul(w2.T[None, :, :], g2).reshape(n, cin, kh, kw, ho, wo)
            dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=dt)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i * dilation:i * dilation + ho,
                        j * dilation:j * dilation + wo] += dcols[:, :, i, j]
            dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        if bias is not None and bias.requires_grad:
            db = g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)
        return dx, dw, db

    inputs = (x, weight, bias) if bias is not None else (x, weight, _NONE_TENSOR)
    return _finish(result, inputs, _backward)


# Placeholder standing in for an absent optional input; never needs a gradient.
_NONE_TENSOR = Tensor(np.zeros((1, 1, 1, 1), dtype=DEFAULT_DTYPE))


def conv1d_channel(x: Tensor, kernel: Tensor) -> Tensor:
    """1-D convolution across the channel axis of an (N,C,1,1) descriptor.

    The kernel has shape (1,k,1,1) with odd k; channels outside the valid
    range are treated as zero, so each output channel mixes its (k-1)/2
    neighbours on either side.
    """
    n, c, h, w = x.shape
    if (h, w) != (1, 1):
        raise ShapeError(f"conv1d_channel expects (N,C,1,1), got {x.shape}")
    k = kernel.shape[1]
    if kernel.shape != (1, k, 1, 1):
        raise ShapeError(f"kernel must be (1,k,1,1), got {kernel.shape}")
    if k % 2 == 0:
        raise ConfigError(f"channel kernel size must be odd, got {k}")
    half = (k - 1) // 2
    dt = x.data.dtype
    xc = x.data.reshape(n, c)
    kern = kernel.data.reshape(k).astype(dt, copy=False)
    xpad = np.zeros((n, c + k - 1), dtype=dt)
    xpad[:, half:half + c] = xc
    out = np.zeros((n, c), dtype=dt)
    for j in range(k):
        out += kern[j] * xpad[:, j:j + c]
    result = Tensor(out.reshape(n, c, 1, 1), requires_grad=_any_grad(x, kernel))

    def _backward(g: np.ndarray):
        gc = g.reshape(n, c)
        dx = dk = None
        if kernel.requires_grad:
            dk = np.array([(gc * xpad[:, j:j + c]).sum() for j in range(k)],
                          dtype=dt).reshape(1, k, 1, 1)
        if x.requires_grad:
            gpad = np.zeros((n, c + k - 1), dtype=dt)
            gpad[:, half:half + c] = gc
            dxc = np.zeros((n, c), dtype=dt)
            for j in range(k):
                dxc += kern[k - 1 - j] * gpad[:, j:j + c]
            dx = dxc.reshape(n, c, 1, 1)
        return dx, dk

    return _finish(result, (x, kernel), _backward)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def avg_pool3x3(x: Tensor) -> Tensor:
    """3x3 mean blur with zero padding 1 and a fixed divisor of 9.

    Border windows keep the divisor 9 (padded zeros count), which makes the
    operation exactly a convolution with the uniform 1/9 kernel.
    """
    n, c, h, w = x.shape
    dt = x.data.dtype
    xp = np.zeros((n, c, h + 2, w + 2), dtype=dt)
    xp[:, :, 1:1 + h, 1:1 + w] = x.data
    out = np.zeros((n, c, h, w), dtype=dt)
    for i in range(3):
        for j in range(3):
            out += xp[:, :, i:i + h, j:j + w]
    out /= dt.type(9)
    result = Tensor(out, requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        gd = g / dt.type(9)
        dxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + h, j:j + w] += gd
        return (dxp[:, :, 1:1 + h, 1:1 + w],)

    return _finish(result, (x,), _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (N,C,H,W) -> (N,C,1,1)."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    result = Tensor(out, requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.data.dtype, copy=True),)

    return _finish(result, (x,), _backward)


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    result = Tensor(out, requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        return (g * (x.data > 0),)

    return _finish(result, (x,), _backward)


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.data.dtype)
    result = Tensor(out, requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return _finish(result, (x,), _backward)


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} requires identical shapes, got {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    result = Tensor(a.data + b.data, requires_grad=_any_grad(a, b))

    def _backward(g: np.ndarray):
        return g, g

    return _finish(result, (a, b), _backward)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "subtract")
    result = Tensor(a.data - b.data, requires_grad=_any_grad(a, b))

    def _backward(g: np.ndarray):
        return g, -g

    return _finish(result, (a, b), _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting over singleton axes."""
    result = Tensor(a.data * b.data, requires_grad=_any_grad(a, b))

    def _backward(g: np.ndarray):
        da = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        db = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return da, db

    return _finish(result, (a, b), _backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient with numpy broadcasting over singleton axes."""
    result = Tensor(a.data / b.data, requires_grad=_any_grad(a, b))

    def _backward(g: np.ndarray):
        da = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        db = (_unbroadcast(-g * a.data / (b.data * b.data), b.shape)
              if b.requires_grad else None)
        return da, db

    return _finish(result, (a, b), _backward)


def scale_channels(x: Tensor, weights: Tensor) -> Tensor:
    """Rescale each channel of x by a per-channel (N,C,1,1) weight."""
    n, c = x.shape[:2]
    if weights.shape != (n, c, 1, 1):
        raise ShapeError(f"channel weights must be ({n},{c},1,1), got {weights.shape}")
    result = Tensor(x.data * weights.data, requires_grad=_any_grad(x, weights))

    def _backward(g: np.ndarray):
        dx = g * weights.data if x.requires_grad else None
        dw = ((g * x.data).sum(axis=(2, 3), keepdims=True)
              if weights.requires_grad else None)
        return dx, dw

    return _finish(result, (x, weights), _backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis, a's channels first."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat requires equal N,H,W, got {a.shape} vs {b.shape}")
    ca = a.shape[1]
    result = Tensor(np.concatenate([a.data, b.data], axis=1),
                    requires_grad=_any_grad(a, b))

    def _backward(g: np.ndarray):
        return g[:, :ca].copy(), g[:, ca:].copy()

    return _finish(result, (a, b), _backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (N, C*r^2, H, W) into (N, C, r*H, r*W) sub-pixel order."""
    n, crr, h, w = x.shape
    if r < 1 or crr % (r * r) != 0:
        raise ShapeError(f"channel count {crr} not divisible by r^2={r * r}")
    c = crr // (r * r)
    out = (x.data.reshape(n, c, r, r, h, w)
           .transpose(0, 1, 4, 2, 5, 3)
           .reshape(n, c, r * h, r * w))
    result = Tensor(out, requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        dx = (g.reshape(n, c, h, r, w, r)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(n, crr, h, w))
        return (np.ascontiguousarray(dx),)

    return _finish(result, (x,), _backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of pixel_shuffle: (N, C, r*H, r*W) -> (N, C*r^2, H, W)."""
    n, c, rh, rw = x.shape
    if rh % r or rw % r:
        raise ShapeError(f"spatial dims {rh}x{rw} not divisible by r={r}")
    h, w = rh // r, rw // r
    out = (x.data.reshape(n, c, h, r, w, r)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(n, c * r * r, h, w))
    result = Tensor(np.ascontiguousarray(out), requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        dx = (g.reshape(n, c, r, r, h, w)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(n, c, rh, rw))
        return (np.ascontiguousarray(dx),)

    return _finish(result, (x,), _backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def absolute(x: Tensor) -> Tensor:
    result = Tensor(np.abs(x.data), requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        return (g * np.sign(x.data),)

    return _finish(result, (x,), _backward)


def mean_all(x: Tensor) -> Tensor:
    """Mean over every element, producing a (1,1,1,1) scalar tensor."""
    out = np.asarray(x.data.mean(dtype=x.data.dtype)).reshape(1, 1, 1, 1)
    result = Tensor(out, requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        return (np.full(x.shape, g.reshape(()) / x.size, dtype=x.data.dtype),)

    return _finish(result, (x,), _backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum over every element, producing a (1,1,1,1) scalar tensor."""
    out = np.asarray(x.data.sum(dtype=x.data.dtype)).reshape(1, 1, 1, 1)
    result = Tensor(out, requires_grad=x.requires_grad)

    def _backward(g: np.ndarray):
        return (np.full(x.shape, g.reshape(()), dtype=x.data.dtype),)

    return _finish(result, (x,), _backward)
