"""Figures written next to the tab-delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _figure(width=5.0, height=None):
    height = height or width * 0.62
    return plt.subplots(figsize=(width, height))


def plot_loss_curve(history: list, path, title: str = "training loss"):
    with plt.rc_context(RC):
        fig, ax = _figure()
        steps = [r["step"] for r in history]
        ax.plot(steps, [r["loss"] for r in history], label="total", color="k")
        if history and "l1" in history[0]:
            ax.plot(steps, [r["l1"] for r in history], label="L1", lw=0.8)
        if history and np.isfinite(history[0].get("wssim", np.nan)):
            ax.plot(steps, [r["wssim"] for r in history], label="wavelet SSIM", lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_eval(rows: list, path):
    """Per-image PSNR of derained vs rainy input."""
    with plt.rc_context(RC):
        fig, ax = _figure(max(4.0, 0.35 * len(rows) + 2))
        x = np.arange(len(rows))
        ax.bar(x - 0.2, [r["rainy_psnr"] for r in rows], 0.4, label="rainy", color="0.7")
        ax.bar(x + 0.2, [r["psnr"] for r in rows], 0.4, label="derained", color="tab:blue")
        ax.set_xticks(x)
        ax.set_xticklabels([r["name"] for r in rows], rotation=90)
        ax.set_ylabel("PSNR (dB)")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_ablation(rows: list, path):
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.5, 3.2))
        labels = [r["label"] for r in rows]
        y = np.arange(len(rows))
        a1.barh(y, [r["psnr"] for r in rows], color="tab:blue")
        a1.set_yticks(y)
        a1.set_yticklabels(labels)
        a1.set_xlabel("PSNR (dB)")
        a2.barh(y, [r["ssim"] for r in rows], color="tab:orange")
        a2.set_yticks(y)
        a2.set_yticklabels([])
        a2.set_xlabel("SSIM")
        fig.savefig(path)
        plt.close(fig)
