"""Evaluation metrics: MSE, Dice, Hausdorff, segmentation propagation, and
the per-dataset evaluation harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from . import fields
from .fields import BoundaryMode


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _check_mask(name: str, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2D")
    if not np.isin(m, [0, 1]).all():
        raise ValueError(f"{name} must be strictly {{0,1}}-valued")
    return m.astype(bool)


def dice(a: np.ndarray, b: np.ndarray):
    """Dice overlap 2|A & B| / (|A| + |B|). Returns None (a distinguished
    "no foreground" outcome) when both masks are empty."""
    a = _check_mask("a", a)
    b = _check_mask("b", b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return None
    return 2.0 * int((a & b).sum()) / denom


def boundary_points(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbor; the image
    border counts as background. Returns an (n, 2) array of (row, col)."""
    m = _check_mask("mask", mask)
    padded = np.pad(m, 1, constant_values=False)
    interior_ok = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                   & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.argwhere(m & ~interior_ok)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance (Euclidean, pixels) between the boundary
    point sets of two nonempty masks."""
    pa = boundary_points(a)
    pb = boundary_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("hausdorff requires two nonempty masks")
    d_ab = cKDTree(pb).query(pa)[0].max()
    d_ba = cKDTree(pa).query(pb)[0].max()
    return float(max(d_ab, d_ba))


def propagate_segmentation(mask: np.ndarray, disp, bc=BoundaryMode.CLAMP) -> np.ndarray:
    """Deform a binary mask by a displacement field: warp it as a real-valued
    image, then threshold at 0.5 back to binary."""
    m = _check_mask("mask", mask)
    img = torch.as_tensor(m, dtype=torch.float32)
    d = torch.as_tensor(disp, dtype=torch.float32)
    warped = fields.warp_image(img, d, bc)
    return (warped.numpy() >= 0.5).astype(np.uint8)


@dataclass
class EvalReport:
    """Per-(sequence, frame) metrics plus per-frame aggregates.

    mse / neg_jac are (N, T) arrays; dice / hd are (N, T) arrays or None
    when the dataset carries no masks.
    """

    mse: np.ndarray
    neg_jac: np.ndarray
    dice: np.ndarray | None
    hd: np.ndarray | None

    @property
    def num_frames(self) -> int:
        return self.mse.shape[1]

    def frame_stats(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(mean, std) over the dataset for each frame index."""
        arr = getattr(self, name)
        if arr is None:
            raise ValueError(f"metric {name!r} absent (dataset has no masks)")
        return arr.mean(axis=0), arr.std(axis=0)

    def write_csv(self, rows_path, summary_path) -> None:
        with open(rows_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seq_id", "frame", "mse", "dice", "hd", "neg_jac_frac"])
            n, t = self.mse.shape
            for i in range(n):
                for tau in range(t):
                    d = "" if self.dice is None else repr(float(self.dice[i, tau]))
                    h = "" if self.hd is None else repr(float(self.hd[i, tau]))
                    w.writerow([i, tau + 1, repr(float(self.mse[i, tau])), d, h,
                                repr(float(self.neg_jac[i, tau]))])
        with open(summary_path, "w", newline="") as f:
            w = csv.writer(f)
            header = ["frame", "mse_mean", "mse_std", "neg_jac_mean", "neg_jac_std"]
            if self.dice is not None:
                header += ["dice_mean", "dice_std", "hd_mean", "hd_std"]
            w.writerow(header)
            for tau in range(self.num_frames):
                row = [tau + 1,
                       repr(float(self.mse[:, tau].mean())), repr(float(self.mse[:, tau].std())),
                       repr(float(self.neg_jac[:, tau].mean())),
                       repr(float(self.neg_jac[:, tau].std()))]
                if self.dice is not None:
                    row += [repr(float(self.dice[:, tau].mean())),
                            repr(float(self.dice[:, tau].std())),
                            repr(float(self.hd[:, tau].mean())),
                            repr(float(self.hd[:, tau].std()))]
                w.writerow(row)


def evaluate(checkpoint_or_model, dataset, mode: str = "tlrn") -> EvalReport:
    """Run the forward pass over every sequence and compute per-frame MSE,
    negative-Jacobian fraction, and (when masks exist) Dice / Hausdorff of
    the propagated reference mask against each frame's ground truth."""
    from .network import TLRN
    from .training import Checkpoint

    if isinstance(checkpoint_or_model, Checkpoint):
        model = checkpoint_or_model.build_model()
    elif isinstance(checkpoint_or_model, TLRN):
        model = checkpoint_or_model
    else:
        raise TypeError("expected a Checkpoint or a TLRN model")
    if not len(dataset):
        raise ValueError("empty dataset")

    use_residual = mode == "tlrn"
    has_masks = all(s.masks is not None for s in dataset)
    mses, negjacs, dices, hds = [], [], [], []
    with torch.no_grad():
        for s in dataset:
            frames = torch.as_tensor(s.frames, dtype=torch.float32)
            if frames.shape[-1] != model.cfg.image_size:
                raise ValueError(
                    f"dataset image size {frames.shape[-1]} does not match "
                    f"checkpoint image size {model.cfg.image_size}")
            out = model.forward_frames(frames[None], use_residual=use_residual)
            t = frames.shape[0] - 1
            warped = out.warped[0].numpy()
            target = s.frames[1:]
            mses.append([mse(warped[tau], target[tau]) for tau in range(t)])
            negjacs.append([fields.neg_jacobian_fraction(out.deformations[0, tau])
                            for tau in range(t)])
            if has_masks:
                drow, hrow = [], []
                for tau in range(t):
                    prop = propagate_segmentation(s.masks[0], out.deformations[0, tau],
                                                  model.cfg.boundary)
                    gt = s.masks[tau + 1]
                    d = dice(prop, gt)
                    drow.append(np.nan if d is None else d)
                    hrow.append(hausdorff(prop, gt)
                                if prop.any() and gt.any() else np.nan)
                dices.append(drow)
                hds.append(hrow)
    return EvalReport(
        mse=np.array(mses),
        neg_jac=np.array(negjacs),
        dice=np.array(dices) if has_masks else None,
        hd=np.array(hds) if has_masks else None,
    )
