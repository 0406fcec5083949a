"""Dense numpy tensors with reverse-mode automatic differentiation.

Every differentiable op returns a new :class:`Tensor` that remembers its
parents and a closure mapping the upstream gradient to one gradient per
parent.  :meth:`Tensor.backward` orders the recorded graph topologically
(the tape) and replays the adjoints in reverse, visiting each op once.

Convolutions follow the correlation convention (no kernel flip).
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

DEFAULT_DTYPE = np.float32

# Finite-difference step and relative tolerance keyed by precision.
GRADCHECK_TOLERANCES = {
    np.dtype(np.float32): (1e-3, 1e-3),
    np.dtype(np.float64): (1e-6, 1e-6),
}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and not isinstance(data, (np.ndarray, np.generic)):
            dtype = DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    # ---------------------------------------------------------------- basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # ---------------------------------------------------------------- autodiff
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Populate ``.grad`` of every requires_grad leaf reachable from self.

        ``self`` must be a scalar unless an explicit upstream ``grad`` is
        given.  Gradients accumulate across calls; reset with ``zero_grad``.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        tape = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # ---------------------------------------------------------------- operators
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

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}") from None


# -------------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise product; a ``[B,C,1,1]`` factor broadcasts over ``[B,C,H,W]``."""
    a, b = _coerce_pair(a, b)
    _broadcast_shape(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape(a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(x: Tensor, exponent: float) -> Tensor:
    return _make(x.data ** exponent, (x,),
                 lambda g: (g * exponent * x.data ** (exponent - 1),))


def absolute(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """max(x, slope*x); the derivative at exactly 0 is taken as 1."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must lie in [0, 1), got {slope}")
    pos = x.data >= 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


# -------------------------------------------------------------------- reductions
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tsum(x, axis, keepdims) * (1.0 / n)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean of a ``[B,C,H,W]`` tensor, shaped ``[B,C,1,1]``."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [B,C,H,W], got {x.shape}")
    return mean(x, axis=(2, 3), keepdims=True)


# -------------------------------------------------------------------- shape ops
def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (x,), backward)


def pad_edge(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Replicate the last row/column of a ``[B,C,H,W]`` tensor ``pad_h``/``pad_w`` times."""
    if pad_h == 0 and pad_w == 0:
        return x
    out = np.pad(x.data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    H, W = x.shape[2:]

    def backward(g):
        gx = g[:, :, :H, :W].copy()
        if pad_h:
            gx[:, :, H - 1, :] += g[:, :, H:, :W].sum(axis=2)
        if pad_w:
            gx[:, :, :, W - 1] += g[:, :, :H, W:].sum(axis=3)
        if pad_h and pad_w:
            gx[:, :, H - 1, W - 1] += g[:, :, H:, W:].sum(axis=(2, 3))
        return (gx,)

    return _make(out, (x,), backward)


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Top-left ``height x width`` window of a ``[B,C,H,W]`` tensor."""
    return getitem(x, (slice(None), slice(None), slice(0, height), slice(0, width)))


# -------------------------------------------------------------------- convolution
def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """[B,C,H,W] -> contiguous [B*Ho*Wo, C*kh*kw] patch matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    B, C, Ho, Wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int,
            Ho: int, Wo: int) -> np.ndarray:
    """Scatter-add inverse of :func:`_im2col` into an array of ``shape``."""
    B, C = shape[:2]
    cols = cols.reshape(B, Ho, Wo, C, kh, kw)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``[B,Cin,H,W]`` with ``[Cout,Cin,kh,kw]``."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    B, Cin, H, W = x.shape
    Cout, Ck, kh, kw = kernel.shape
    if Ck != Cin:
        raise ShapeError(f"conv2d: input has {Cin} channels but kernel {kernel.shape} expects {Ck}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}+{padding}")
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({Cout},)")

    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride)
    kmat = kernel.data.reshape(Cout, -1)
    out = cols @ kmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, Cout)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = _col2im(g2 @ kmat, xp.shape, kh, kw, stride, Ho, Wo)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(np.ascontiguousarray(out), parents, backward)


def transposed_conv2d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Transpose of :func:`conv2d`; kernel is ``[Cin,Cout,kh,kw]``."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"transposed_conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    B, Cin, H, W = x.shape
    Ck, Cout, kh, kw = kernel.shape
    if Ck != Cin:
        raise ShapeError(f"transposed_conv2d: input has {Cin} channels but kernel {kernel.shape} expects {Ck}")
    if stride < 1:
        raise ValueError("stride must be positive")
    Ho, Wo = (H - 1) * stride + kh, (W - 1) * stride + kw
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, Cin)
    kmat = kernel.data.reshape(Cin, -1)
    out = _col2im(x2 @ kmat, (B, Cout, Ho, Wo), kh, kw, stride, H, W)

    def backward(g):
        cols = _im2col(g, kh, kw, stride)
        gx = (cols @ kmat.T).reshape(B, H, W, Cin).transpose(0, 3, 1, 2) if x.requires_grad else None
        gk = (x2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        return gx, gk

    return _make(out, (x, kernel), backward)


# -------------------------------------------------------------------- helpers
def parameters_of(tensors: Iterable[Tensor]) -> list:
    return [t for t in tensors if t.requires_grad]
