"""Deterministic SVG rendering of evaluation reports and deformation strips."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

_SAVEFIG = dict(metadata={"Date": None})  # byte-identical output for identical input


def _configure():
    plt.rcParams["svg.hashsalt"] = "tlrn"


def read_summary(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"empty summary CSV {path}")
    cols = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
    return cols


def _require(cols: dict, names: list[str], path) -> None:
    missing = [n for n in names if n not in cols]
    if missing:
        raise ValueError(f"summary CSV {path} is missing columns: {', '.join(missing)}")


def plot_mse(summary_path, out_path, label: str = "model",
             other: tuple[str, str] | None = None) -> None:
    """Per-frame MSE with a mean +/- std band; optionally overlay a second
    summary for side-by-side comparison."""
    _configure()
    cols = read_summary(summary_path)
    _require(cols, ["frame", "mse_mean", "mse_std"], summary_path)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    series = [(cols, label)]
    if other is not None:
        series.append((read_summary(other[0]), other[1]))
    for c, lab in series:
        ax.plot(c["frame"], c["mse_mean"], marker="o", label=lab)
        ax.fill_between(c["frame"], c["mse_mean"] - c["mse_std"],
                        c["mse_mean"] + c["mse_std"], alpha=0.2)
    ax.set_xlabel("frame")
    ax.set_ylabel("MSE")
    ax.set_xticks(cols["frame"])
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVEFIG)
    plt.close(fig)


def plot_dice_hd(summary_path, out_path, label: str = "model",
                 other: tuple[str, str] | None = None) -> None:
    """Per-frame Dice and Hausdorff distance panels (mean +/- std bands)."""
    _configure()
    cols = read_summary(summary_path)
    _require(cols, ["frame", "dice_mean", "dice_std", "hd_mean", "hd_std"],
             summary_path)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    series = [(cols, label)]
    if other is not None:
        series.append((read_summary(other[0]), other[1]))
    for c, lab in series:
        ax1.plot(c["frame"], c["dice_mean"], marker="o", label=lab)
        ax1.fill_between(c["frame"], c["dice_mean"] - c["dice_std"],
                         c["dice_mean"] + c["dice_std"], alpha=0.2)
        ax2.plot(c["frame"], c["hd_mean"], marker="o", label=lab)
        ax2.fill_between(c["frame"], c["hd_mean"] - c["hd_std"],
                         c["hd_mean"] + c["hd_std"], alpha=0.2)
    ax1.set_xlabel("frame")
    ax1.set_ylabel("Dice")
    ax2.set_xlabel("frame")
    ax2.set_ylabel("HD (px)")
    for ax in (ax1, ax2):
        ax.set_xticks(cols["frame"])
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVEFIG)
    plt.close(fig)


def _draw_grid(ax, disp: np.ndarray, spacing: int = 4) -> None:
    """Trace warped horizontal/vertical gridlines of phi(x) = x + u(x)."""
    _, h, w = disp.shape
    xs = np.arange(w)
    ys = np.arange(h)
    px = xs[None, :] + disp[0]
    py = ys[:, None] + disp[1]
    for r in range(0, h, spacing):
        ax.plot(px[r, :], py[r, :], color="tab:blue", linewidth=0.5)
    for c in range(0, w, spacing):
        ax.plot(px[:, c], py[:, c], color="tab:blue", linewidth=0.5)
    ax.set_xlim(-1, w)
    ax.set_ylim(h, -1)
    ax.set_aspect("equal")
    ax.axis("off")


def plot_sequence_strip(model, sample, out_path, mode: str = "tlrn") -> None:
    """Image strip for one sequence: target frames, warped reference, and the
    deformation grid for each time step."""
    _configure()
    frames = torch.as_tensor(sample.frames, dtype=torch.float32)
    with torch.no_grad():
        out = model.forward_frames(frames[None], use_residual=(mode == "tlrn"))
    t = frames.shape[0] - 1
    fig, axes = plt.subplots(3, t, figsize=(1.3 * t, 4.2), squeeze=False)
    for tau in range(t):
        axes[0][tau].imshow(sample.frames[tau + 1], cmap="gray", vmin=0, vmax=1)
        axes[0][tau].set_title(f"t={tau + 1}", fontsize=8)
        axes[1][tau].imshow(out.warped[0, tau].numpy(), cmap="gray", vmin=0, vmax=1)
        _draw_grid(axes[2][tau], out.deformations[0, tau].numpy())
        for row in (0, 1):
            axes[row][tau].axis("off")
    axes[0][0].set_ylabel("target")
    axes[1][0].set_ylabel("warped")
    fig.tight_layout()
    fig.savefig(out_path, **_SAVEFIG)
    plt.close(fig)
