"""Synthetic image-sequence generators and the dataset container format.

Two generators are provided:

* thickened lemniscate (figure-eight) contours deformed over time by a
  smoothly interpolated random affine map, and
* contracting annulus ("ring") sequences with exact per-frame binary masks,
  a stand-in for cardiac short-axis myocardium motion for
  segmentation-propagation experiments.

Everything is a pure function of (spec, seed).
"""

from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class DatasetFormatError(Exception):
    """Raised when a dataset container fails to parse; carries the byte
    offset of the first inconsistency."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class LemniscateSpec:
    a: float = 18.0
    sigma_x: float = 2.0
    sigma_y: float = 2.0
    n_alpha: int = 720
    image_size: int = 64
    T: int = 11
    seed: int = 0

    def __post_init__(self):
        if self.a <= 0 or self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("a, sigma_x, sigma_y must be positive")
        if self.n_alpha < 16:
            raise ValueError("n_alpha must be >= 16")
        if self.T < 1:
            raise ValueError("T must be >= 1")


@dataclass
class AffineSchedule:
    """Per-frame affine parameters; frame tau applies the fraction tau/T of
    the endpoint transform (motion accumulates linearly)."""

    scale_x: np.ndarray
    scale_y: np.ndarray
    rotation: np.ndarray
    translate_x: np.ndarray
    translate_y: np.ndarray

    @property
    def T(self) -> int:
        return len(self.scale_x)

    @classmethod
    def interpolated(cls, T: int, scale_x: float, scale_y: float, rotation: float,
                     translate_x: float, translate_y: float) -> "AffineSchedule":
        frac = np.arange(1, T + 1) / T
        return cls(
            scale_x=1.0 + frac * (scale_x - 1.0),
            scale_y=1.0 + frac * (scale_y - 1.0),
            rotation=frac * rotation,
            translate_x=frac * translate_x,
            translate_y=frac * translate_y,
        )


#: default endpoint ranges for random affine schedules at 64^2; the
#: translation range scales with image size.
DEFAULT_SCHEDULE_RANGES = {
    "scale": (0.85, 1.25),
    "rotation": (-0.35, 0.35),
    "translation": (-6.0, 6.0),
}


@dataclass
class SequenceSample:
    """A reference frame plus T follow-up frames, with optional masks.

    frames: float32 (T+1, H, W) in [0, 1]; masks: uint8 {0,1} (T+1, H, W).
    """

    frames: np.ndarray
    masks: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.frames.shape[0] - 1

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[0] < 2:
            raise ValueError(f"frames must be (T+1, H, W) with T >= 1, got {self.frames.shape}")
        if self.masks is not None:
            if self.masks.shape != self.frames.shape:
                raise ValueError("masks must share the frames' shape")
            vals = np.unique(self.masks)
            if not np.isin(vals, [0, 1]).all():
                raise ValueError("masks must be strictly {0,1}-valued")


def lemniscate_contour(a: float, n_alpha: int) -> np.ndarray:
    """Sample the figure-eight contour x = a cos(t)/(sin^2 t + 1),
    y = a sin(t) cos(t)/(sin^2 t + 1) at n_alpha angles on [0, 2*pi)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if n_alpha < 16:
        raise ValueError("n_alpha must be >= 16")
    alpha = np.arange(n_alpha) * (2 * np.pi / n_alpha)
    denom = np.sin(alpha) ** 2 + 1.0
    x = a * np.cos(alpha) / denom
    y = a * np.sin(alpha) * np.cos(alpha) / denom
    return np.stack([x, y], axis=1)


def rasterize_contour(points: np.ndarray, sigma_x: float, sigma_y: float,
                      image_size: int) -> np.ndarray:
    """Render a contour as a thickened band: each point (recentered to the
    grid center) dilates into the box [x-sx, x+sx] x [y-sy, y+sy], with a
    one-pixel linear falloff at the box edges. Values in [0, 1]."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ValueError("empty contour")
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError("thickness must be positive")
    c = (image_size - 1) / 2.0
    px = points[:, 0] + c
    py = points[:, 1] + c
    reach_x = np.abs(points[:, 0]).max() + sigma_x + 1
    reach_y = np.abs(points[:, 1]).max() + sigma_y + 1
    if reach_x > c or reach_y > c:
        raise ValueError(
            f"contour with thickness (extent {reach_x:.1f} x {reach_y:.1f} px from center) "
            f"does not fit a {image_size}^2 grid")
    xs = np.arange(image_size, dtype=np.float64)
    # coverage of a pixel by one box: 1 inside, linear ramp over 1 px outside
    cov_x = np.clip(sigma_x + 1.0 - np.abs(xs[None, :] - px[:, None]), 0.0, 1.0)
    cov_y = np.clip(sigma_y + 1.0 - np.abs(xs[None, :] - py[:, None]), 0.0, 1.0)
    img = np.zeros((image_size, image_size), dtype=np.float64)
    # max over points of the separable coverage product, chunked to bound memory
    step = 256
    for i in range(0, len(px), step):
        block = cov_y[i:i + step, :, None] * cov_x[i:i + step, None, :]
        np.maximum(img, block.max(axis=0), out=img)
    return img.astype(np.float32)


def _affine_frame(ref: np.ndarray, sx: float, sy: float, rot: float,
                  tx: float, ty: float) -> np.ndarray:
    """Inverse-warp the reference through the affine map about the grid
    center (bilinear, clamped borders)."""
    h, w = ref.shape
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    # forward map in (row, col) coordinates: y = c + R S (x - c) + t
    cos, sin = np.cos(rot), np.sin(rot)
    fwd = np.array([[sy * cos, -sx * sin],
                    [sy * sin, sx * cos]])
    inv = np.linalg.inv(fwd)
    offset = c - inv @ (c + np.array([ty, tx]))
    return ndimage.affine_transform(
        ref.astype(np.float64), inv, offset=offset, order=1, mode="nearest"
    ).astype(np.float32)


def make_lemniscate_sequence(spec: LemniscateSpec,
                             schedule_ranges: dict | None = None) -> SequenceSample:
    """Generate one lemniscate sequence: a randomized thickened figure-eight
    reference frame, deformed by a random linearly-interpolated affine
    schedule. Deterministic given spec.seed."""
    ranges = dict(DEFAULT_SCHEDULE_RANGES)
    if schedule_ranges:
        ranges.update(schedule_ranges)
    rng = np.random.default_rng(spec.seed)
    a = spec.a * rng.uniform(0.8, 1.1)
    sx = spec.sigma_x * rng.uniform(0.8, 1.2)
    sy = spec.sigma_y * rng.uniform(0.8, 1.2)
    ref = rasterize_contour(lemniscate_contour(a, spec.n_alpha), sx, sy, spec.image_size)

    t_scale = spec.image_size / 64.0
    lo, hi = ranges["scale"]
    end_sx, end_sy = rng.uniform(lo, hi, size=2)
    end_rot = rng.uniform(*ranges["rotation"])
    tlo, thi = ranges["translation"]
    end_tx, end_ty = rng.uniform(tlo * t_scale, thi * t_scale, size=2)
    sched = AffineSchedule.interpolated(spec.T, end_sx, end_sy, end_rot, end_tx, end_ty)

    frames = [ref]
    for tau in range(spec.T):
        frames.append(_affine_frame(ref, sched.scale_x[tau], sched.scale_y[tau],
                                    sched.rotation[tau], sched.translate_x[tau],
                                    sched.translate_y[tau]))
    return SequenceSample(
        frames=np.stack(frames),
        metadata={"kind": "lemniscate", "seed": spec.seed,
                  "spec": dataclasses.asdict(spec),
                  "schedule": {k: v.tolist() for k, v in dataclasses.asdict(sched).items()}},
    )


def make_ring_sequence(image_size: int, T: int, radii_schedule: np.ndarray,
                       seed: int = 0) -> SequenceSample:
    """Generate a contracting-annulus sequence with exact per-frame masks.

    radii_schedule: (T+1, 2) array of (inner, outer) radii in pixels. The
    frame intensity is 1 on the annulus and falls off linearly over one
    pixel outside it; the mask marks pixel centers with inner <= r <= outer.
    """
    radii = np.asarray(radii_schedule, dtype=np.float64)
    if radii.shape != (T + 1, 2):
        raise ValueError(f"radii_schedule must be ({T + 1}, 2), got {radii.shape}")
    if not (radii[:, 0] < radii[:, 1]).all():
        raise ValueError("inner radius must be < outer radius at every frame")
    if (radii[:, 1] + 1 > (image_size - 1) / 2.0).any():
        raise ValueError("annulus (with falloff) does not fit in the grid")
    c = (image_size - 1) / 2.0
    ys, xs = np.mgrid[0:image_size, 0:image_size]
    r = np.hypot(xs - c, ys - c)
    frames, masks = [], []
    for r_in, r_out in radii:
        inner = np.clip(r - r_in + 1.0, 0.0, 1.0)
        outer = np.clip(r_out - r + 1.0, 0.0, 1.0)
        frames.append((inner * outer).astype(np.float32))
        masks.append(((r >= r_in) & (r <= r_out)).astype(np.uint8))
    return SequenceSample(
        frames=np.stack(frames), masks=np.stack(masks),
        metadata={"kind": "ring", "seed": seed, "radii": radii.tolist()},
    )


def random_ring_schedule(image_size: int, T: int, seed: int) -> np.ndarray:
    """Draw a smooth monotone contraction schedule of (inner, outer) radii."""
    rng = np.random.default_rng(seed)
    r_out0 = image_size * rng.uniform(0.33, 0.42)
    thickness = image_size * rng.uniform(0.10, 0.16)
    shrink = rng.uniform(0.65, 0.85)
    frac = np.arange(T + 1) / T
    r_out = r_out0 * (1.0 + frac * (shrink - 1.0))
    r_in = r_out - thickness * (0.6 + 0.4 * (r_out / r_out0))
    r_in = np.maximum(r_in, 1.5)
    return np.stack([r_in, r_out], axis=1)


def derive_seed(dataset_seed: int, index: int) -> int:
    """Per-sample seed, stable under parallel generation."""
    ss = np.random.SeedSequence(entropy=dataset_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


# --- dataset container ----------------------------------------------------

MAGIC = b"TLRNDATA"
VERSION = 1
_DTYPE_F32 = 1


def write_dataset(samples: list[SequenceSample], path) -> None:
    """Serialize homogeneous samples to the binary dataset container."""
    if not samples:
        raise ValueError("no samples to write")
    t = samples[0].T
    h, w = samples[0].frames.shape[1:]
    has_masks = samples[0].masks is not None
    for i, s in enumerate(samples):
        if s.T != t or s.frames.shape[1:] != (h, w) or (s.masks is not None) != has_masks:
            raise ValueError(f"sample {i} is not homogeneous with sample 0")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<IIIIBB", len(samples), t, h, w, int(has_masks), _DTYPE_F32))
    for s in samples:
        buf.write(np.ascontiguousarray(s.frames, dtype="<f4").tobytes())
    if has_masks:
        for s in samples:
            buf.write(np.ascontiguousarray(s.masks, dtype="u1").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_dataset(path) -> list[SequenceSample]:
    """Read a dataset container; bit-exact inverse of write_dataset."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:8] != MAGIC:
        raise DatasetFormatError(f"bad magic {data[:8]!r}, expected {MAGIC!r}", 0)
    off = 8
    if len(data) < off + 4:
        raise DatasetFormatError("truncated before version field", off)
    (version,) = struct.unpack_from("<I", data, off)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}", off)
    off += 4
    if len(data) < off + 18:
        raise DatasetFormatError("truncated header", off)
    count, t, h, w, has_masks, dtype_code = struct.unpack_from("<IIIIBB", data, off)
    off += 18
    if dtype_code != _DTYPE_F32:
        raise DatasetFormatError(f"unknown dtype code {dtype_code}", off - 1)
    frame_bytes = (t + 1) * h * w * 4
    mask_bytes = (t + 1) * h * w
    expected = off + count * frame_bytes + (count * mask_bytes if has_masks else 0)
    if len(data) != expected:
        raise DatasetFormatError(
            f"header declares {count} samples ({expected} bytes) but file has "
            f"{len(data)} bytes", min(len(data), expected))
    samples = []
    for i in range(count):
        frames = np.frombuffer(data, dtype="<f4", count=(t + 1) * h * w,
                               offset=off + i * frame_bytes).reshape(t + 1, h, w).copy()
        samples.append(SequenceSample(frames=frames, metadata={"index": i}))
    off += count * frame_bytes
    if has_masks:
        for i, s in enumerate(samples):
            s.masks = np.frombuffer(data, dtype="u1", count=(t + 1) * h * w,
                                    offset=off + i * mask_bytes).reshape(t + 1, h, w).copy()
    return samples
