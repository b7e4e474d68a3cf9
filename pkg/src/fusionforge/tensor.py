"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value is a ``(N, C, H, W)`` numpy buffer; lower-rank data is stored
with size-1 leading axes.  Operations build a computation graph on the fly
(when gradient tracking is enabled) and :func:`backward` walks it in
reverse topological order, accumulating gradients additively so a value
that fans out k times receives k contributions.

Training code runs in float32; gradient checks use float64 tensors built
from the same ops.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "RunningStats",
    "ShapeError",
    "Tensor",
    "absolute",
    "add",
    "backward",
    "batch_norm2d",
    "clamp",
    "conv2d",
    "conv_transpose2d",
    "fully_connected",
    "log",
    "mean",
    "no_grad",
    "offset",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "square",
    "subtract",
    "tv_norm",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """An operation or layer configuration is internally inconsistent."""


_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (eval-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_4d(data, dtype=None) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.array(data, copy=True)
    if arr.dtype.kind not in "fiu":
        raise TypeError(f"tensor data must be numeric, got dtype {arr.dtype}")
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    if arr.ndim > 4:
        raise ShapeError(f"tensors have at most rank 4, got shape {arr.shape}")
    while arr.ndim < 4:
        arr = arr[np.newaxis]
    return arr


class Tensor:
    """A dense ``(N, C, H, W)`` value with optional gradient tracking.

    ``grad`` is populated by :func:`backward` and has the same shape as
    ``data``.  Tensors with ``requires_grad=False`` are immutable by
    convention once built and safe to share across threads.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_4d(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic sugar over the primitive ops (tensor +/- tensor, scalar
    # multiply/offset only; elementwise tensor products are not part of
    # the op set).
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return offset(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return subtract(self, other)
        return offset(self, -float(other))

    def __rsub__(self, other):
        return offset(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor*tensor products are not supported; use scale() with a scalar")
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _node(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray, fresh: bool = False) -> None:
    """Add ``g`` into ``t.grad``.

    ``fresh`` marks buffers the caller allocated for this target alone;
    they are adopted without copying. Shared buffers (an output gradient
    passed through to a parent) must be copied so two accumulation
    targets never alias each other.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if fresh else g.copy()
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = _node(a.data + b.data, (a, b))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad)
            _accumulate(b, out.grad)
        out._backward = bw
    return out


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "subtract")
    out = _node(a.data - b.data, (a, b))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad)
            _accumulate(b, -out.grad, fresh=True)
        out._backward = bw
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply every element by a python scalar."""
    factor = float(factor)
    out = _node(a.data * factor, (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad * factor, fresh=True)
        out._backward = bw
    return out


def offset(a: Tensor, amount: float) -> Tensor:
    """Add a python scalar to every element."""
    out = _node(a.data + float(amount), (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad)
        out._backward = bw
    return out


def absolute(a: Tensor) -> Tensor:
    out = _node(np.abs(a.data), (a,))
    if out.requires_grad:
        sign = np.sign(a.data)  # subgradient 0 at ties
        def bw():
            _accumulate(a, out.grad * sign, fresh=True)
        out._backward = bw
    return out


def square(a: Tensor) -> Tensor:
    out = _node(a.data * a.data, (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad * (2.0 * a.data), fresh=True)
        out._backward = bw
    return out


def log(a: Tensor) -> Tensor:
    """Natural logarithm; inputs must be strictly positive (callers clamp)."""
    if np.any(a.data <= 0):
        raise ValueError("log requires strictly positive input; clamp upstream")
    out = _node(np.log(a.data), (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad / a.data, fresh=True)
        out._backward = bw
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    if not lo < hi:
        raise ConfigError(f"clamp bounds must satisfy lo < hi, got [{lo}, {hi}]")
    out = _node(np.clip(a.data, lo, hi), (a,))
    if out.requires_grad:
        mask = (a.data >= lo) & (a.data <= hi)
        def bw():
            _accumulate(a, out.grad * mask, fresh=True)
        out._backward = bw
    return out


def mean(a: Tensor) -> Tensor:
    """Mean over all elements, as a (1,1,1,1) scalar tensor."""
    out = _node(np.full((1, 1, 1, 1), a.data.mean(), dtype=a.data.dtype), (a,))
    if out.requires_grad:
        def bw():
            g = out.grad.reshape(()) / a.data.size
            _accumulate(a, np.full_like(a.data, g), fresh=True)
        out._backward = bw
    return out


def relu(a: Tensor) -> Tensor:
    out = _node(np.maximum(a.data, 0), (a,))
    if out.requires_grad:
        mask = a.data > 0  # subgradient 0 at the kink
        def bw():
            _accumulate(a, out.grad * mask, fresh=True)
        out._backward = bw
    return out


def sigmoid(a: Tensor) -> Tensor:
    """Numerically stable logistic; saturates to exactly 0/1 without NaN."""
    x = a.data
    ex = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    out = _node(y, (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad * y * (1.0 - y), fresh=True)
        out._backward = bw
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"reshape target must be rank 4, got {shape}")
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.data.size} elements) to {shape}")
    out = _node(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def bw():
            _accumulate(a, out.grad.reshape(a.shape), fresh=True)
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# convolution (cross-correlation, no kernel flip) and its adjoint


def _im2col(x: np.ndarray, k: int, stride: int, padding: int,
            ho: int, wo: int) -> np.ndarray:
    n, c, _, _ = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = x[:, :, di:di + stride * ho:stride,
                                   dj:dj + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, n: int, c: int, h: int, w: int,
            k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, k, k, ho, wo)
    for di in range(k):
        for dj in range(k):
            out[:, :, di:di + stride * ho:stride,
                dj:dj + stride * wo:stride] += cols6[:, :, di, dj]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return out


def _check_conv_args(stride: int, padding: int) -> None:
    if not (isinstance(stride, int) and stride >= 1):
        raise ConfigError(f"stride must be a positive int, got {stride!r}")
    if not (isinstance(padding, int) and padding >= 0):
        raise ConfigError(f"padding must be a non-negative int, got {padding!r}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` has shape (C_out, C_in, k, k); output extents are
    ``floor((H + 2*padding - k)/stride) + 1``.
    """
    _check_conv_args(stride, padding)
    n, c_in, h, w = x.shape
    c_out, c_w, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv2d expects a square kernel, got {kh}x{kw}")
    if c_in != c_w:
        raise ShapeError(f"conv2d: input has {c_in} channels but weight expects {c_w}")
    if bias.size != c_out:
        raise ShapeError(f"conv2d: bias has {bias.size} entries, expected {c_out}")
    k = kh
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ConfigError(
            f"conv2d output extent is non-positive for input {h}x{w}, "
            f"kernel {k}, stride {stride}, padding {padding}")

    pointwise = k == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.reshape(n, c_in, h * w)  # im2col is a no-op view here
    else:
        cols = _im2col(x.data, k, stride, padding, ho, wo)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    y = np.matmul(w2, cols)
    y += bias.data.reshape(1, c_out, 1)
    out = _node(y.reshape(n, c_out, ho, wo), (x, weight, bias))
    if out.requires_grad:
        def bw():
            g = out.grad.reshape(n, c_out, ho * wo)
            if weight.requires_grad:
                dw = np.einsum("ncl,nkl->ck", g, cols, optimize=True)
                _accumulate(weight, dw.reshape(weight.shape), fresh=True)
            if bias.requires_grad:
                _accumulate(bias, g.sum(axis=(0, 2)).reshape(bias.shape), fresh=True)
            if x.requires_grad:
                dcols = np.matmul(w2.T, g)
                if pointwise:
                    dx = dcols.reshape(n, c_in, h, w)
                else:
                    dx = _col2im(dcols, n, c_in, h, w, k, stride, padding, ho, wo)
                _accumulate(x, dx, fresh=True)
        out._backward = bw
    return out


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor,
                     stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` with the same geometry.

    ``weight`` has shape (C_in, C_out, k, k); output extents are
    ``(H - 1)*stride - 2*padding + k + output_padding``.
    """
    _check_conv_args(stride, padding)
    if not (isinstance(output_padding, int) and 0 <= output_padding < stride):
        raise ConfigError(
            f"output_padding must satisfy 0 <= output_padding < stride, "
            f"got {output_padding!r} with stride {stride}")
    n, c_in, h, w = x.shape
    c_w, c_out, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv_transpose2d expects a square kernel, got {kh}x{kw}")
    if c_in != c_w:
        raise ShapeError(
            f"conv_transpose2d: input has {c_in} channels but weight expects {c_w}")
    if bias.size != c_out:
        raise ShapeError(f"conv_transpose2d: bias has {bias.size} entries, expected {c_out}")
    k = kh
    hout = (h - 1) * stride - 2 * padding + k + output_padding
    wout = (w - 1) * stride - 2 * padding + k + output_padding
    if hout < 1 or wout < 1:
        raise ConfigError(
            f"conv_transpose2d output extent is non-positive for input {h}x{w}, "
            f"kernel {k}, stride {stride}, padding {padding}")

    w2 = weight.data.reshape(c_in, c_out * k * k)
    xr = x.data.reshape(n, c_in, h * w)
    cols = np.matmul(w2.T, xr)
    y = _col2im(cols, n, c_out, hout, wout, k, stride, padding, h, w)
    y += bias.data.reshape(1, c_out, 1, 1)
    out = _node(y, (x, weight, bias))
    if out.requires_grad:
        def bw():
            dcols = _im2col(out.grad, k, stride, padding, h, w)
            if x.requires_grad:
                _accumulate(x, np.matmul(w2, dcols).reshape(n, c_in, h, w), fresh=True)
            if weight.requires_grad:
                dw = np.einsum("nil,nkl->ik", xr, dcols, optimize=True)
                _accumulate(weight, dw.reshape(weight.shape), fresh=True)
            if bias.requires_grad:
                _accumulate(bias, out.grad.sum(axis=(0, 2, 3)).reshape(bias.shape),
                            fresh=True)
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# batch normalization


class RunningStats:
    """Per-channel running mean/variance buffers for batch normalization."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def copy(self) -> "RunningStats":
        out = RunningStats(self.mean.size, self.mean.dtype)
        out.mean[...] = self.mean
        out.var[...] = self.var
        return out


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats,
                 mode: str = "train", momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization.

    ``train`` normalizes by batch statistics (biased variance) and updates
    the running buffers in place; ``eval`` normalizes by the running
    statistics.  Gradients are defined in both modes.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm2d mode must be 'train' or 'eval', got {mode!r}")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    n, c, h, w = x.shape
    if gamma.size != c or beta.size != c:
        raise ShapeError(
            f"batch_norm2d: gamma/beta have {gamma.size}/{beta.size} entries, "
            f"expected {c}")
    if running.mean.size != c:
        raise ShapeError(
            f"batch_norm2d: running stats track {running.mean.size} channels, expected {c}")

    gam = gamma.data.reshape(1, c, 1, 1)
    bet = beta.data.reshape(1, c, 1, 1)

    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        xhat = x.data - mu.reshape(1, c, 1, 1)
        var = (xhat * xhat).mean(axis=(0, 2, 3))
        running.mean *= 1.0 - momentum
        running.mean += momentum * mu.astype(running.mean.dtype)
        running.var *= 1.0 - momentum
        running.var += momentum * var.astype(running.var.dtype)
        inv = 1.0 / np.sqrt(var + eps)
        xhat *= inv.reshape(1, c, 1, 1)
    else:
        inv = 1.0 / np.sqrt(running.var.astype(x.data.dtype) + eps)
        xhat = (x.data - running.mean.astype(x.data.dtype).reshape(1, c, 1, 1)) \
            * inv.reshape(1, c, 1, 1)

    y = xhat * gam
    y += bet
    out = _node(y, (x, gamma, beta))
    if out.requires_grad:
        m = n * h * w
        def bw():
            g = out.grad
            if gamma.requires_grad:
                _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)).reshape(gamma.shape),
                            fresh=True)
            if beta.requires_grad:
                _accumulate(beta, g.sum(axis=(0, 2, 3)).reshape(beta.shape), fresh=True)
            if x.requires_grad:
                dxhat = g * gam
                if mode == "train":
                    s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                    s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                    dx = (inv.reshape(1, c, 1, 1) / m) * (m * dxhat - s1 - xhat * s2)
                else:
                    dx = dxhat * inv.reshape(1, c, 1, 1)
                _accumulate(x, dx, fresh=True)
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# fully connected


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map per batch row; ``x`` is flattened to (N, D).

    ``weight`` holds a (D, M) matrix in its trailing axes, ``bias`` M entries.
    """
    n = x.shape[0]
    d = x.size // n
    d_w, m = weight.shape[2], weight.shape[3]
    if weight.shape[:2] != (1, 1):
        raise ShapeError(f"fully_connected weight must be (1,1,D,M), got {weight.shape}")
    if d != d_w:
        raise ShapeError(
            f"fully_connected: input flattens to {n}x{d} but weight expects D={d_w}")
    if bias.size != m:
        raise ShapeError(f"fully_connected: bias has {bias.size} entries, expected {m}")

    x2 = x.data.reshape(n, d)
    w2 = weight.data.reshape(d_w, m)
    y = x2 @ w2 + bias.data.reshape(1, m)
    out = _node(y.reshape(n, m, 1, 1), (x, weight, bias))
    if out.requires_grad:
        def bw():
            g = out.grad.reshape(n, m)
            if x.requires_grad:
                _accumulate(x, (g @ w2.T).reshape(x.shape), fresh=True)
            if weight.requires_grad:
                _accumulate(weight, (x2.T @ g).reshape(weight.shape), fresh=True)
            if bias.requires_grad:
                _accumulate(bias, g.sum(axis=0).reshape(bias.shape), fresh=True)
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# anisotropic total variation


def tv_norm(d: Tensor) -> Tensor:
    """Anisotropic TV of a single-channel batch, normalized by pixel count.

    Sum of absolute horizontal and vertical neighbor differences, divided
    by N*H*W; subgradient 0 at ties.
    """
    n, c, h, w = d.shape
    if c != 1:
        raise ShapeError(f"tv_norm expects a single-channel batch, got {c} channels")
    dh = d.data[:, :, :, 1:] - d.data[:, :, :, :-1]
    dv = d.data[:, :, 1:, :] - d.data[:, :, :-1, :]
    denom = n * h * w
    val = (np.abs(dh).sum() + np.abs(dv).sum()) / denom
    out = _node(np.full((1, 1, 1, 1), val, dtype=d.data.dtype), (d,))
    if out.requires_grad:
        sh = np.sign(dh)
        sv = np.sign(dv)
        def bw():
            g = out.grad.reshape(()) / denom
            dd = np.zeros_like(d.data)
            dd[:, :, :, 1:] += sh * g
            dd[:, :, :, :-1] -= sh * g
            dd[:, :, 1:, :] += sv * g
            dd[:, :, :-1, :] -= sv * g
            _accumulate(d, dd, fresh=True)
        out._backward = bw
    return out
