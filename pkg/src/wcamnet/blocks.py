"""Wavelet channel attention blocks.

A block parameter set is a plain ``dict`` of named tensors::

    conv.weight, conv.bias                    main 3x3 path
    att.squeeze.weight, att.squeeze.bias      1x1, C_in -> hidden
    att.excite.weight, att.excite.bias        1x1, hidden -> C_out

The residual block nests a WCAM under ``wcam.`` and an IWCAM under ``iwcam.``.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    conv2d,
    crop,
    global_avg_pool,
    leaky_relu,
    pad_edge,
    sigmoid,
)
from .wavelet import dwt2d, idwt2d

ATTENTION_MODES = ("sigmoid", "literal", "none")
REDUCTION = 4
SLOPE = 0.2


def attention_width(cout: int) -> int:
    return max(cout // REDUCTION, 4)


def init_conv(rng: np.random.Generator, cout: int, cin: int, k: int, dtype,
              slope: float = SLOPE) -> tuple:
    """He-uniform kernel for a LeakyReLU of the given slope, zero bias."""
    bound = np.sqrt(6.0 / ((1.0 + slope ** 2) * cin * k * k))
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
    return Tensor(w, requires_grad=True), Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)


def init_block(rng: np.random.Generator, conv_in: int, conv_out: int, att_in: int,
               attention: str = "sigmoid", dtype=np.float32) -> dict:
    p = {}
    p["conv.weight"], p["conv.bias"] = init_conv(rng, conv_out, conv_in, 3, dtype)
    if attention != "none":
        hidden = attention_width(conv_out)
        p["att.squeeze.weight"], p["att.squeeze.bias"] = init_conv(rng, hidden, att_in, 1, dtype)
        p["att.excite.weight"], p["att.excite.bias"] = init_conv(rng, conv_out, hidden, 1, dtype)
    return p


def init_wcam(rng, channels: int, attention: str = "sigmoid", dtype=np.float32) -> dict:
    """WCAM taking ``channels`` to ``4 * channels``."""
    return init_block(rng, 4 * channels, 4 * channels, channels, attention, dtype)


def init_iwcam(rng, channels: int, attention: str = "sigmoid", dtype=np.float32) -> dict:
    """IWCAM taking ``channels`` (divisible by 4) to ``channels // 4``."""
    c = channels // 4
    return init_block(rng, c, c, channels, attention, dtype)


def init_residual_wcam(rng, channels: int, attention: str = "sigmoid", dtype=np.float32) -> dict:
    p = {f"wcam.{k}": v for k, v in init_wcam(rng, channels, attention, dtype).items()}
    p.update({f"iwcam.{k}": v for k, v in init_iwcam(rng, 4 * channels, attention, dtype).items()})
    return p


def _sub(p: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in p.items() if k.startswith(prefix)}


def channel_attention(x: Tensor, p: dict, mode: str = "sigmoid", slope: float = SLOPE) -> Tensor:
    """Squeeze-excite gate ``[B,C_out,1,1]`` computed from the pooled block input."""
    h = leaky_relu(conv2d(global_avg_pool(x), p["att.squeeze.weight"], p["att.squeeze.bias"]), slope)
    z = conv2d(h, p["att.excite.weight"], p["att.excite.bias"])
    if mode == "sigmoid":
        return sigmoid(z)
    if mode == "literal":
        return leaky_relu(z, slope)
    raise ValueError(f"unknown attention mode {mode!r}")


def _gated(x: Tensor, transformed: Tensor, p: dict, attention: str, slope: float) -> Tensor:
    y = leaky_relu(conv2d(transformed, p["conv.weight"], p["conv.bias"], padding=1), slope)
    if attention == "none":
        return y
    return y * channel_attention(x, p, attention, slope)


def wcam_forward(x: Tensor, p: dict, attention: str = "sigmoid", slope: float = SLOPE) -> Tensor:
    """``[B,C,H,W]`` -> ``[B,4C,H/2,W/2]``: conv(DWT(x)) gated by attention on x."""
    return _gated(x, dwt2d(x), p, attention, slope)


def iwcam_forward(x: Tensor, p: dict, attention: str = "sigmoid", slope: float = SLOPE) -> Tensor:
    """``[B,4C,h,w]`` -> ``[B,C,2h,2w]``: conv(IDWT(x)) gated by attention on x."""
    if x.ndim != 4 or x.shape[1] % 4:
        raise ShapeError(f"iwcam needs a channel count divisible by 4, got {x.shape}")
    return _gated(x, idwt2d(x), p, attention, slope)


def residual_wcam_forward(x: Tensor, p: dict, attention: str = "sigmoid",
                          slope: float = SLOPE) -> Tensor:
    """x + IWCAM(WCAM(x)), shape-preserving.

    Odd spatial extents (the bottleneck of a 16-multiple input is 1x1 per
    factor of 16) are edge-padded to even for the inner path and cropped back.
    """
    H, W = x.shape[2:]
    inner = pad_edge(x, H % 2, W % 2)
    inner = wcam_forward(inner, _sub(p, "wcam."), attention, slope)
    inner = iwcam_forward(inner, _sub(p, "iwcam."), attention, slope)
    if inner.shape[2:] != (H, W):
        inner = crop(inner, H, W)
    return x + inner
