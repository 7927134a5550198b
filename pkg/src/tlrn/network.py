"""TLRN registration network.

A pairwise U-Net maps (reference, frame) image pairs to a latent feature at
the bottleneck; a recurrent residual unit fuses each frame's latent with the
accumulated latent from earlier frames; a shared decoder turns the adjusted
latent back into a stationary velocity field, which is exponentiated into a
diffeomorphic deformation. The ablation baseline runs the identical pipeline
with the residual unit bypassed (each frame registered independently).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import fields
from .fields import BoundaryMode


@dataclass
class NetworkConfig:
    image_size: int = 64
    base_channels: int = 16
    num_downsamplings: int = 3
    latent_channels: int = 32
    residual_hidden_channels: int = 32
    leaky_slope: float = 0.2
    num_squarings: int = 6
    boundary: BoundaryMode = BoundaryMode.CLAMP

    def __post_init__(self):
        self.boundary = fields._as_mode(self.boundary)
        if self.image_size % (2 ** self.num_downsamplings) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^{self.num_downsamplings}")
        for name in ("base_channels", "latent_channels", "residual_hidden_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must be in (0, 1)")
        if self.num_squarings < 1:
            raise ValueError("num_squarings must be >= 1")

    @property
    def latent_size(self) -> int:
        return self.image_size // (2 ** self.num_downsamplings)


@dataclass
class SequenceOutput:
    """Per-frame outputs of a forward pass over one sequence or a batch.

    Tensors are shaped (T, ...) for a single sequence and (B, T, ...) when
    batched.
    """

    velocities: torch.Tensor      # (..., T, 2, H, W)
    deformations: torch.Tensor    # (..., T, 2, H, W)
    warped: torch.Tensor          # (..., T, H, W)
    latents: torch.Tensor         # (..., T, C, h, w)


class TLRN(nn.Module):
    """Registration network with a temporal latent residual unit.

    Parameter groups:
      * ``encoder`` + ``decoder``: the pairwise U-Net (shared across frames)
      * ``residual``: two 3x3 convolutions with a LeakyReLU between them
      * ``shortcut``: 1x1 linear projection of the concatenated latents
    """

    def __init__(self, cfg: NetworkConfig, dtype: torch.dtype = torch.float32,
                 seed: int = 0):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        d = cfg.num_downsamplings
        lat = cfg.latent_channels

        self.enc_in = nn.Conv2d(2, c, 3, padding=1)
        self.enc_down = nn.ModuleList(
            nn.Conv2d(c * 2 ** i, c * 2 ** (i + 1), 3, stride=2, padding=1)
            for i in range(d))
        self.enc_latent = nn.Conv2d(c * 2 ** d, lat, 3, padding=1)

        self.dec_in = nn.Conv2d(lat, c * 2 ** d, 3, padding=1)
        self.dec_up = nn.ModuleList(
            nn.Conv2d(c * 2 ** (i + 1) + c * 2 ** i, c * 2 ** i, 3, padding=1)
            for i in reversed(range(d)))
        self.dec_out = nn.Conv2d(c, 2, 3, padding=1)

        self.res_fn = nn.Sequential(
            nn.Conv2d(2 * lat, cfg.residual_hidden_channels, 3, padding=1),
            nn.LeakyReLU(cfg.leaky_slope),
            nn.Conv2d(cfg.residual_hidden_channels, lat, 3, padding=1),
        )
        self.shortcut = nn.Conv2d(2 * lat, lat, 1, bias=False)

        self.to(dtype)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0, identity_start: bool = True) -> None:
        """Seeded init: fan-in-scaled normal weights, zero biases, and (by
        default) a zero final velocity layer so training starts at the
        identity map.

        identity_start=False leaves the final layer small-random instead;
        useful for gradient checks, where an exactly-zero velocity would put
        every bilinear sample on an interpolation kink.
        """
        g = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                with torch.no_grad():
                    w = torch.empty_like(m.weight, dtype=torch.float32)
                    w.normal_(0.0, fan_in ** -0.5, generator=g)
                    m.weight.copy_(w)
                    if m.bias is not None:
                        m.bias.zero_()
        with torch.no_grad():
            if identity_start:
                self.dec_out.weight.zero_()
                self.dec_out.bias.zero_()
            else:
                w = torch.empty_like(self.dec_out.weight, dtype=torch.float32)
                w.normal_(0.0, 0.05, generator=g)
                self.dec_out.weight.copy_(w)
                b = torch.empty_like(self.dec_out.bias, dtype=torch.float32)
                b.normal_(0.0, 0.05, generator=g)
                self.dec_out.bias.copy_(b)

    # --- parameter groups -------------------------------------------------

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        unet = [m for name, m in self.named_parameters()
                if name.startswith(("enc_", "dec_"))]
        return {
            "encoder_decoder": unet,
            "residual": list(self.res_fn.parameters()),
            "shortcut": list(self.shortcut.parameters()),
        }

    def set_residual_passthrough(self) -> None:
        """Set (residual, shortcut) so the fuse step returns its current
        input unchanged: F == 0 and the shortcut selects the second half of
        the concatenation. Under these parameters the temporal forward pass
        equals the baseline exactly."""
        lat = self.cfg.latent_channels
        with torch.no_grad():
            self.res_fn[2].weight.zero_()
            self.res_fn[2].bias.zero_()
            self.shortcut.weight.zero_()
            for i in range(lat):
                self.shortcut.weight[i, lat + i, 0, 0] = 1.0

    # --- building blocks --------------------------------------------------

    def encode_pair(self, ref: torch.Tensor, frame: torch.Tensor):
        """Encode a (reference, frame) pair into the bottleneck latent.

        Inputs are (H, W) or batched (B, H, W). Returns (latent, skips)
        where skips are the per-level encoder features the decoder consumes.
        """
        single = ref.dim() == 2
        if single:
            ref, frame = ref[None], frame[None]
        if ref.shape != frame.shape:
            raise ValueError(f"pair shapes differ: {tuple(ref.shape)} vs {tuple(frame.shape)}")
        if ref.shape[-1] != self.cfg.image_size or ref.shape[-2] != self.cfg.image_size:
            raise ValueError(
                f"expected {self.cfg.image_size}^2 images, got {tuple(ref.shape[-2:])}")
        s = self.cfg.leaky_slope
        x = torch.stack([ref, frame], dim=1)
        skips = []
        x = F.leaky_relu(self.enc_in(x), s)
        for down in self.enc_down:
            skips.append(x)
            x = F.leaky_relu(down(x), s)
        z = self.enc_latent(x)
        if single:
            z = z[0]
            skips = [sk[0] for sk in skips]
        return z, skips

    def residual_fuse(self, prev: torch.Tensor, curr: torch.Tensor) -> torch.Tensor:
        """Fuse the accumulated latent with the current frame's latent:
        F(prev (+) curr) + W(prev (+) curr)."""
        if prev.shape != curr.shape:
            raise ValueError(f"latent shapes differ: {tuple(prev.shape)} vs {tuple(curr.shape)}")
        single = prev.dim() == 3
        cat = torch.cat([prev, curr], dim=1 if not single else 0)
        if single:
            cat = cat[None]
        out = self.res_fn(cat) + self.shortcut(cat)
        return out[0] if single else out

    def decode_velocity(self, latent: torch.Tensor, skips) -> torch.Tensor:
        """Decode a bottleneck latent (plus encoder skips) into a velocity
        field at image resolution."""
        single = latent.dim() == 3
        if single:
            latent = latent[None]
            skips = [sk[None] for sk in skips]
        want = (self.cfg.latent_channels, self.cfg.latent_size, self.cfg.latent_size)
        if tuple(latent.shape[1:]) != want:
            raise ValueError(f"latent shape {tuple(latent.shape[1:])} != expected {want}")
        s = self.cfg.leaky_slope
        x = F.leaky_relu(self.dec_in(latent), s)
        for up, skip in zip(self.dec_up, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.leaky_relu(up(torch.cat([x, skip], dim=1)), s)
        v = self.dec_out(x)
        return v[0] if single else v

    # --- sequence forward passes -------------------------------------------

    def forward_frames(self, frames: torch.Tensor, use_residual: bool = True,
                       num_squarings: int | None = None,
                       boundary: BoundaryMode | None = None) -> SequenceOutput:
        """Run the full pipeline over a batch of sequences.

        frames: (B, T+1, H, W) with frame 0 the reference. Frame tau's
        latent is fused with the accumulated latent (zero before the first
        frame) when use_residual is set; otherwise frames are processed
        independently (the pairwise ablation baseline).
        """
        if frames.dim() != 4:
            raise ValueError(f"frames must be (B, T+1, H, W), got {tuple(frames.shape)}")
        b, n, h, w = frames.shape
        if n < 2:
            raise ValueError("need at least one follow-up frame")
        t = n - 1
        k = num_squarings if num_squarings is not None else self.cfg.num_squarings
        bc = boundary if boundary is not None else self.cfg.boundary

        ref = frames[:, :1].expand(b, t, h, w).reshape(b * t, h, w)
        tgt = frames[:, 1:].reshape(b * t, h, w)
        z, skips = self.encode_pair(ref, tgt)

        lat_c = self.cfg.latent_channels
        ls = self.cfg.latent_size
        if use_residual:
            z_seq = z.reshape(b, t, lat_c, ls, ls)
            state = torch.zeros(b, lat_c, ls, ls, dtype=z.dtype, device=z.device)
            fused = []
            for tau in range(t):
                state = self.residual_fuse(state, z_seq[:, tau])
                fused.append(state)
            zhat = torch.stack(fused, dim=1).reshape(b * t, lat_c, ls, ls)
        else:
            zhat = z

        v = self.decode_velocity(zhat, skips)
        phi = fields.exp_map(v, k, bc)
        warped = fields.warp_image(ref[:, None], phi, bc)[:, 0]

        return SequenceOutput(
            velocities=v.reshape(b, t, 2, h, w),
            deformations=phi.reshape(b, t, 2, h, w),
            warped=warped.reshape(b, t, h, w),
            latents=zhat.reshape(b, t, lat_c, ls, ls),
        )


def _frames_tensor(seq, dtype, like: TLRN) -> torch.Tensor:
    """Accept a SequenceSample, numpy array, or tensor of frames."""
    frames = getattr(seq, "frames", seq)
    t = torch.as_tensor(frames, dtype=dtype)
    if t.dim() != 3:
        raise ValueError(f"expected (T+1, H, W) frames, got {tuple(t.shape)}")
    return t


def tlrn_forward(model: TLRN, seq, num_squarings: int | None = None,
                 boundary: BoundaryMode | None = None) -> SequenceOutput:
    """Temporal forward pass over a single sequence (frames (T+1, H, W))."""
    dtype = next(model.parameters()).dtype
    frames = _frames_tensor(seq, dtype, model)
    out = model.forward_frames(frames[None], True, num_squarings, boundary)
    return SequenceOutput(out.velocities[0], out.deformations[0], out.warped[0],
                          out.latents[0])


def baseline_forward(model: TLRN, seq, num_squarings: int | None = None,
                     boundary: BoundaryMode | None = None) -> SequenceOutput:
    """Pairwise ablation forward pass: the residual unit is bypassed, every
    frame is registered to the reference independently."""
    dtype = next(model.parameters()).dtype
    frames = _frames_tensor(seq, dtype, model)
    out = model.forward_frames(frames[None], False, num_squarings, boundary)
    return SequenceOutput(out.velocities[0], out.deformations[0], out.warped[0],
                          out.latents[0])
