"""Figures written next to run outputs: sample grids, loss curves, eval series."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402


def to_uint8(images: torch.Tensor) -> np.ndarray:
    """B x 3 x H x W in [-1, 1] -> B x H x W x 3 uint8."""
    x = ((images.detach().clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    return x.permute(0, 2, 3, 1).cpu().numpy()


def save_image_grid(images: torch.Tensor, path: str | Path, nrow: int = 8, pad: int = 2) -> Path:
    """Tile up to nrow x nrow images into one PNG; empty cells stay black."""
    arr = to_uint8(images[: nrow * nrow])
    h, w = arr.shape[1:3]
    grid = np.zeros((nrow * (h + pad) + pad, nrow * (w + pad) + pad, 3), dtype=np.uint8)
    for k, img in enumerate(arr):
        r, c = divmod(k, nrow)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[y:y + h, x:x + w] = img
    path = Path(path)
    Image.fromarray(grid).save(path)
    return path


def read_metrics(path: str | Path) -> tuple[list[dict], list[dict]]:
    steps, evals = [], []
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        (evals if rec.get("type") == "eval" else steps).append(rec)
    return steps, evals


def _smooth(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if len(v) < window or window < 2:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")


def plot_losses(metrics_path: str | Path, out: str | Path, window: int = 20) -> Path:
    steps, _ = read_metrics(metrics_path)
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.4))
    for key, ax in (("total_g", axes[0]), ("total_d", axes[1]), ("d_acc", axes[2])):
        series = [s[key] for s in steps if key in s]
        ax.plot(_smooth(series, window), lw=1)
        ax.set_title(key)
        ax.set_xlabel("step")
    axes[2].axhline(0.5, color="grey", ls=":", lw=1)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return Path(out)


EVAL_KEYS = ("is_mean", "fid", "r_precision", "vqa_acc_consensus")


def plot_eval_series(metrics_path: str | Path, out: str | Path) -> Path | None:
    _, evals = read_metrics(metrics_path)
    if not evals:
        return None
    fig, axes = plt.subplots(1, len(EVAL_KEYS), figsize=(14, 3.2))
    epochs = [e["epoch"] for e in evals]
    for key, ax in zip(EVAL_KEYS, axes):
        ax.plot(epochs, [e[key] for e in evals], marker="o")
        ax.set_title(key)
        ax.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return Path(out)


def plot_attention(image: torch.Tensor, attention: torch.Tensor, words: Sequence[str],
                   out: str | Path) -> Path:
    """One generated image and its per-word attention maps (T x h x w)."""
    n = len(words)
    fig, axes = plt.subplots(1, n + 1, figsize=(1.6 * (n + 1), 1.9))
    axes = np.atleast_1d(axes)
    axes[0].imshow(to_uint8(image[None])[0])
    axes[0].set_title("image", fontsize=8)
    for k, word in enumerate(words):
        axes[k + 1].imshow(attention[k].detach().cpu().numpy(), cmap="viridis", vmin=0)
        axes[k + 1].set_title(word, fontsize=8)
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return Path(out)


def plot_variant_comparison(rows: Sequence[dict], out: str | Path,
                            keys: Sequence[str] = ("fid", "vqa_acc_consensus")) -> Path:
    """Grouped bars of per-seed metrics; rows carry ``seed``, ``variant`` and metric keys."""
    seeds = sorted({r["seed"] for r in rows})
    variants = sorted({r["variant"] for r in rows})
    fig, axes = plt.subplots(1, len(keys), figsize=(5 * len(keys), 3.2))
    axes = np.atleast_1d(axes)
    width = 0.8 / len(variants)
    for ax, key in zip(axes, keys):
        for j, variant in enumerate(variants):
            vals = [next(r[key] for r in rows if r["seed"] == s and r["variant"] == variant) for s in seeds]
            ax.bar(np.arange(len(seeds)) + j * width, vals, width, label=variant)
        ax.set_xticks(np.arange(len(seeds)) + width * (len(variants) - 1) / 2)
        ax.set_xticklabels([f"seed {s}" for s in seeds])
        ax.set_title(key)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return Path(out)
