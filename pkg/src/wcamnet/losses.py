"""Training losses (L1, wavelet SSIM) and evaluation metrics (PSNR, SSIM)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, absolute, conv2d, reshape
from .wavelet import dwt2d, subband

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
PSNR_CAP = 99.0
MIN_SUBBAND_RANGE = 1e-3


@dataclass
class LossWeights:
    lambda_l1: float = 1.0
    lambda_wssim: float = 1.0

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_wssim < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_l1 == 0 and self.lambda_wssim == 0:
            raise ValueError("at least one loss weight must be positive")


def _check_same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same(pred, target)
    return absolute(pred - target).mean()


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(x: Tensor) -> Tensor:
    g = gaussian_window().astype(x.dtype)
    x = conv2d(x, Tensor(g.reshape(1, 1, WINDOW, 1)))
    return conv2d(x, Tensor(g.reshape(1, 1, 1, WINDOW)))


def ssim(a: Tensor, b: Tensor, data_range: float) -> Tensor:
    """Mean SSIM over valid 11x11 Gaussian windows and channels.

    Accepts ``[C,H,W]`` or ``[B,C,H,W]``; differentiable in both arguments.
    """
    _check_same(a, b)
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    if a.ndim == 3:
        a, b = reshape(a, (1,) + a.shape), reshape(b, (1,) + b.shape)
    if a.ndim != 4:
        raise ShapeError(f"ssim expects [C,H,W] or [B,C,H,W], got {a.shape}")
    B, C, H, W = a.shape
    if H < WINDOW or W < WINDOW:
        raise ShapeError(f"image {H}x{W} is smaller than the {WINDOW}x{WINDOW} SSIM window")
    a = reshape(a, (B * C, 1, H, W))
    b = reshape(b, (B * C, 1, H, W))
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = _blur(a), _blur(b)
    var_a = _blur(a * a) - mu_a * mu_a
    var_b = _blur(b * b) - mu_b * mu_b
    cov = _blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def wavelet_ssim_loss(pred: Tensor, target: Tensor) -> Tensor:
    """1 - mean over the LL/HL/LH/HH subbands of their SSIM.

    Each subband uses the target's empirical value range (floored) as its
    data range.
    """
    _check_same(pred, target)
    sp, st = dwt2d(pred), dwt2d(target)
    total = None
    for k in range(4):
        t_k = subband(st, k)
        rng = max(float(np.ptp(t_k.data)), MIN_SUBBAND_RANGE)
        s_k = ssim(subband(sp, k), t_k, rng)
        total = s_k if total is None else total + s_k
    return 1.0 - total * 0.25


def total_loss(pred: Tensor, target: Tensor, weights: LossWeights | None = None):
    """Weighted L1 + wavelet-SSIM; returns ``(loss, {"l1": .., "wssim": ..})``."""
    w = weights or LossWeights()
    l1 = l1_loss(pred, target)
    terms = {"l1": l1.item()}
    loss = l1 * w.lambda_l1
    if w.lambda_wssim > 0:
        ws = wavelet_ssim_loss(pred, target)
        terms["wssim"] = ws.item()
        loss = loss + ws * w.lambda_wssim
    else:
        terms["wssim"] = float("nan")
    return loss, terms


# ---------------------------------------------------------------- metrics
def psnr(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    """PSNR in dB; identical inputs report the 99 dB cap."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range ** 2 / mse))


def ssim_metric(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    a = Tensor(np.asarray(pred, dtype=np.float64))
    b = Tensor(np.asarray(target, dtype=np.float64))
    return ssim(a, b, data_range).item()
