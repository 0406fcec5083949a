"""Single-level 2-D Haar DWT / IDWT as fixed stride-2 (transposed) convolutions.

Subbands are stacked per source channel in the order LL, HL, LH, HH, so
channel ``4c + k`` of the output holds subband ``k`` of input channel ``c``.
The width (row) filter is applied first, then the height (column) filter:
HL is high-pass along width and low-pass along height, LH the reverse.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, conv2d, reshape, transposed_conv2d

SUBBANDS = ("LL", "HL", "LH", "HH")

_LOW = np.array([1.0, 1.0]) / np.sqrt(2.0)
_HIGH = np.array([1.0, -1.0]) / np.sqrt(2.0)


def haar_kernels(dtype=np.float32) -> np.ndarray:
    """The four 2x2 Haar kernels as a ``[4, 1, 2, 2]`` array (outer(height, width))."""
    pairs = [(_LOW, _LOW), (_LOW, _HIGH), (_HIGH, _LOW), (_HIGH, _HIGH)]
    return np.stack([np.outer(fh, fw) for fh, fw in pairs])[:, None].astype(dtype)


def dwt2d(x: Tensor) -> Tensor:
    """``[B,C,H,W]`` -> ``[B,4C,H/2,W/2]`` subband stack."""
    if x.ndim != 4:
        raise ShapeError(f"dwt2d expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"dwt2d needs even height and width, got {H}x{W}; pad the input first")
    k = Tensor(haar_kernels(x.dtype))
    y = conv2d(reshape(x, (B * C, 1, H, W)), k, stride=2)
    return reshape(y, (B, 4 * C, H // 2, W // 2))


def idwt2d(s: Tensor) -> Tensor:
    """Inverse of :func:`dwt2d`: ``[B,4C,h,w]`` -> ``[B,C,2h,2w]``."""
    if s.ndim != 4:
        raise ShapeError(f"idwt2d expects [B,4C,h,w], got {s.shape}")
    B, C4, h, w = s.shape
    if C4 % 4:
        raise ShapeError(f"idwt2d needs a channel count divisible by 4, got {C4}")
    k = Tensor(haar_kernels(s.dtype))
    y = transposed_conv2d(reshape(s, (B * C4 // 4, 4, h, w)), k, stride=2)
    return reshape(y, (B, C4 // 4, 2 * h, 2 * w))


def subband(s: Tensor, k: int) -> Tensor:
    """Subband ``k`` (0=LL .. 3=HH) of every source channel, ``[B,C,h,w]``."""
    return s[:, k::4]
