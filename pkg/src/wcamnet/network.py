"""Encoder-decoder deraining network with subband confidence-map fusion.

Pipeline for a rainy ``[B,3,H,W]`` image::

    s   = DWT(rainy)                      [B,12,H/2,W/2]
    f0  = lift(s)                         C0
    e1..e3 = WCAM x3                      4C0, 16C0, 64C0
    b   = residual WCAM x n_res
    d3  = IWCAM(b)  + e2
    d2  = IWCAM(d3) + e1
    d1  = IWCAM(d2) + f0
    C   = head(d1)                        [B,12,H/2,W/2] confidence maps
    out = IDWT(C * s)

Without fusion the head output is reconstructed directly: ``out = IDWT(C)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import blocks
from .tensor import ShapeError, Tensor, conv2d, leaky_relu
from .wavelet import dwt2d, idwt2d

MULTIPLE = 16


@dataclass
class NetConfig:
    c0: int = 16
    n_res: int = 2
    attention: str = "sigmoid"
    fusion: bool = True
    lift: bool = True
    slope: float = 0.2
    precision: str = "float32"

    def __post_init__(self):
        self.c0, self.n_res = int(self.c0), int(self.n_res)
        if self.c0 < 4:
            raise ValueError(f"c0 must be >= 4, got {self.c0}")
        if self.attention not in blocks.ATTENTION_MODES:
            raise ValueError(f"attention must be one of {blocks.ATTENTION_MODES}")
        if not self.lift and self.c0 != 12:
            raise ValueError("the lift/head convs can only be bypassed with c0 == 12")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision}")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def widths(self) -> list:
        return [self.c0 * 4 ** i for i in range(4)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def init_params(seed: int, config: NetConfig) -> dict:
    """Deterministic parameters; insertion order is the checkpoint order."""
    rng = np.random.default_rng(seed)
    dt, att = config.dtype, config.attention
    w = config.widths()
    params = {}

    def put(prefix, block):
        params.update({f"{prefix}.{k}": v for k, v in block.items()})

    if config.lift:
        params["lift.weight"], params["lift.bias"] = blocks.init_conv(rng, w[0], 12, 3, dt)
    for i in range(3):
        put(f"enc{i + 1}", blocks.init_wcam(rng, w[i], att, dt))
    for j in range(config.n_res):
        put(f"res{j + 1}", blocks.init_residual_wcam(rng, w[3], att, dt))
    for i in (3, 2, 1):
        put(f"dec{i}", blocks.init_iwcam(rng, w[i], att, dt))
    if config.lift:
        params["head.weight"], params["head.bias"] = blocks.init_conv(rng, 12, w[0], 3, dt)
        if config.fusion:
            # Untrained model passes every subband through unchanged.
            params["head.weight"].data[:] = 0.0
            params["head.bias"].data[:] = 1.0
    for name, t in params.items():
        t.name = name
    return params


def _block(params: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def check_input(rainy: Tensor) -> None:
    if rainy.ndim != 4 or rainy.shape[1] != 3:
        raise ShapeError(f"expected an RGB batch [B,3,H,W], got {rainy.shape}")
    H, W = rainy.shape[2:]
    if H % MULTIPLE or W % MULTIPLE:
        raise ShapeError(f"height and width must be multiples of {MULTIPLE}, got {H}x{W}")


def forward(params: dict, rainy: Tensor, config: NetConfig) -> Tensor:
    """Confidence maps ``[B,12,H/2,W/2]`` (or subbands directly without fusion)."""
    check_input(rainy)
    att, slope = config.attention, config.slope
    s = dwt2d(rainy)
    if config.lift:
        f = leaky_relu(conv2d(s, params["lift.weight"], params["lift.bias"], padding=1), slope)
    else:
        f = s
    skips = [f]
    for i in range(3):
        f = blocks.wcam_forward(f, _block(params, f"enc{i + 1}"), att, slope)
        skips.append(f)
    for j in range(config.n_res):
        f = blocks.residual_wcam_forward(f, _block(params, f"res{j + 1}"), att, slope)
    for i in (3, 2, 1):
        f = blocks.iwcam_forward(f, _block(params, f"dec{i}"), att, slope) + skips[i - 1]
    if config.lift:
        f = conv2d(f, params["head.weight"], params["head.bias"], padding=1)
    return f


def derain(params: dict, rainy: Tensor, config: NetConfig, confidence=None) -> Tensor:
    """Restored image ``[B,3,H,W]`` (unclamped).

    ``confidence`` overrides the predicted maps (scalar or broadcastable
    array); used to check the fusion identities.
    """
    check_input(rainy)
    s = dwt2d(rainy)
    if confidence is None:
        maps = forward(params, rainy, config)
    else:
        maps = Tensor(np.broadcast_to(np.asarray(confidence, dtype=rainy.dtype), s.shape).copy())
    if config.fusion or confidence is not None:
        return idwt2d(maps * s)
    return idwt2d(maps)


def count_parameters(params: dict) -> int:
    return int(sum(t.size for t in params.values()))


class DerainNet:
    """Convenience holder binding a config to its parameters."""

    def __init__(self, config: NetConfig, seed: int = 0, params: dict | None = None):
        self.config = config
        self.params = init_params(seed, config) if params is None else params

    def parameters(self) -> list:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def confidence_maps(self, rainy: Tensor) -> Tensor:
        return forward(self.params, rainy, self.config)

    def __call__(self, rainy: Tensor, confidence=None) -> Tensor:
        return derain(self.params, rainy, self.config, confidence)

    def restore(self, image: np.ndarray, confidence=None) -> np.ndarray:
        """Derain a ``[3,H,W]`` array of any size via reflect padding; clamps to [0,1]."""
        _, H, W = image.shape
        ph, pw = -H % MULTIPLE, -W % MULTIPLE
        padded = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="reflect")
        x = Tensor(padded[None].astype(self.config.dtype))
        out = self(x, confidence).data[0, :, :H, :W]
        return np.clip(out, 0.0, 1.0)
