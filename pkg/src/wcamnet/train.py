"""Training and evaluation loops."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import PairedSample, derive_seed, load_dataset, random_crop_pair
from .losses import psnr, ssim_metric, total_loss
from .network import DerainNet
from .optim import NonFiniteGradient, RAdamState, lr_schedule, radam_step
from .tensor import Tensor

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Loss or gradient became non-finite."""


@dataclass
class TrainResult:
    net: DerainNet
    state: RAdamState
    history: list = field(default_factory=list)
    epochs: list = field(default_factory=list)


def split(samples: list, val_fraction: float) -> tuple:
    n_val = int(round(len(samples) * val_fraction))
    if n_val == 0:
        return samples, []
    return samples[:-n_val], samples[-n_val:]


def make_batch(samples: list, indices, crop: int, seed: int, epoch: int, dtype) -> tuple:
    rainy, clean = [], []
    for i in indices:
        s = samples[i]
        if s.clean.shape[-2:] != (crop, crop):
            s = random_crop_pair(s, crop, derive_seed(seed, epoch, i))
        rainy.append(s.rainy)
        clean.append(s.clean)
    return Tensor(np.stack(rainy).astype(dtype)), Tensor(np.stack(clean).astype(dtype))


def train(cfg: TrainConfig, samples: list | None = None, resume: bool = False,
          max_steps: int | None = None, save: bool = True) -> TrainResult:
    """Run (or resume) training; returns the model, optimizer state and per-step log.

    ``max_steps`` stops early after that many optimizer steps in this call.
    """
    if samples is None:
        samples = load_dataset(cfg.dataset)
    train_set, val_set = split(samples, cfg.val_fraction)
    weights = cfg.loss_weights()
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else None

    start_epoch = 0
    if resume:
        net_cfg, params, state, extra = load_checkpoint(ckpt)
        net = DerainNet(net_cfg, params=params)
        start_epoch = int(extra["epoch"])
        if state is None:
            raise ValueError(f"{ckpt}: checkpoint has no optimizer state to resume from")
        log.info("resuming from %s at epoch %d", ckpt, start_epoch)
    else:
        net = DerainNet(cfg.net_config(), seed=cfg.init_seed)
        state = RAdamState(lr=cfg.base_lr)

    result = TrainResult(net, state)
    steps = 0
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_step_epochs, cfg.lr_schedule)
        order = np.random.default_rng(derive_seed(cfg.seed, epoch)).permutation(len(train_set))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            rainy, clean = make_batch(train_set, order[b:b + cfg.batch_size], cfg.crop_size,
                                      cfg.seed, epoch, net.config.dtype)
            net.zero_grad()
            loss, terms = total_loss(net(rainy), clean, weights)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            try:
                radam_step(net.params, state, lr)
            except NonFiniteGradient as exc:
                raise NumericError(str(exc)) from exc
            row = {"epoch": epoch, "step": state.t, "lr": lr, "loss": value, **terms}
            result.history.append(row)
            losses.append(value)
            if cfg.log_interval and state.t % cfg.log_interval == 0:
                log.debug("step %d loss %.6f", state.t, value)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        summary = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else float("nan")}
        if val_set:
            summary["val_psnr"] = float(np.mean([r["psnr"] for r in evaluate(net, val_set)]))
        result.epochs.append(summary)
        log.info("epoch %d loss %.6f%s", epoch, summary["loss"],
                 f" val_psnr {summary['val_psnr']:.3f}" if val_set else "")
        finished_epoch = max_steps is None or steps < max_steps
        last = epoch + 1 == cfg.epochs
        if save and ckpt and finished_epoch and ((epoch + 1) % cfg.checkpoint_every == 0 or last):
            save_checkpoint(ckpt, net.config, net.params, state,
                            {"epoch": epoch + 1, "train_config": cfg.to_dict()})
        if not finished_epoch:
            break
    return result


def evaluate(net: DerainNet | None, samples: list, confidence=None) -> list:
    """Per-image PSNR/SSIM of the derained output and of the rainy input.

    With ``net=None`` the rainy image itself is scored as the output.
    """
    rows = []
    for s in samples:
        out = s.rainy if net is None else net.restore(s.rainy, confidence)
        rows.append({
            "name": s.stem,
            "psnr": psnr(out, s.clean),
            "ssim": ssim_metric(out, s.clean),
            "rainy_psnr": psnr(s.rainy, s.clean),
            "rainy_ssim": ssim_metric(s.rainy, s.clean),
        })
    return rows


def summarize(rows: list) -> dict:
    keys = ("psnr", "ssim", "rainy_psnr", "rainy_ssim")
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}
