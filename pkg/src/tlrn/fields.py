"""Deformation-field math on regular 2D grids.

Conventions used throughout the package:

* images are torch tensors shaped ``(H, W)`` or batched ``(B, C, H, W)``
* velocity / displacement fields are ``(2, H, W)`` or ``(B, 2, H, W)``,
  channel 0 is the x (column) component, channel 1 the y (row) component
* a deformation phi is stored as a displacement u with phi(x) = x + u(x),
  so the zero field is the identity map

All operations are pure and differentiable where stated; they never mutate
their inputs.
"""

from __future__ import annotations

import enum

import torch


class BoundaryMode(enum.Enum):
    """How sample coordinates outside the grid are handled."""

    CLAMP = "clamp"
    PERIODIC = "periodic"


def _as_mode(mode) -> BoundaryMode:
    if isinstance(mode, BoundaryMode):
        return mode
    return BoundaryMode(mode)


def _check_finite(name: str, t: torch.Tensor) -> None:
    if not torch.isfinite(t).all():
        raise ValueError(f"{name} contains non-finite values")


def _batched(t: torch.Tensor, kind: str) -> tuple[torch.Tensor, bool]:
    """Promote a single image/field to batch form. Returns (tensor, was_single)."""
    if kind == "image":
        if t.dim() == 2:
            return t[None, None], True
        if t.dim() == 4:
            return t, False
        raise ValueError(f"image must be (H, W) or (B, C, H, W), got shape {tuple(t.shape)}")
    # vector field
    if t.dim() == 3:
        if t.shape[0] != 2:
            raise ValueError(f"field must have 2 components, got {t.shape[0]}")
        return t[None], True
    if t.dim() == 4:
        if t.shape[1] != 2:
            raise ValueError(f"field must have 2 components, got {t.shape[1]}")
        return t, False
    raise ValueError(f"field must be (2, H, W) or (B, 2, H, W), got shape {tuple(t.shape)}")


def _bilinear_sample(values: torch.Tensor, x: torch.Tensor, y: torch.Tensor,
                     mode: BoundaryMode) -> torch.Tensor:
    """Sample ``values`` (B, C, H, W) at absolute coordinates x, y (B, H, W)."""
    b, c, h, w = values.shape
    if mode is BoundaryMode.CLAMP:
        x = x.clamp(0, w - 1)
        y = y.clamp(0, h - 1)
    x0f = x.floor()
    y0f = y.floor()
    wx = (x - x0f).unsqueeze(1)
    wy = (y - y0f).unsqueeze(1)
    x0 = x0f.long()
    y0 = y0f.long()
    x1 = x0 + 1
    y1 = y0 + 1
    if mode is BoundaryMode.PERIODIC:
        x0 = x0 % w
        x1 = x1 % w
        y0 = y0 % h
        y1 = y1 % h
    else:
        x0 = x0.clamp(0, w - 1)
        x1 = x1.clamp(0, w - 1)
        y0 = y0.clamp(0, h - 1)
        y1 = y1.clamp(0, h - 1)

    flat = values.reshape(b, c, h * w)

    def take(yy, xx):
        idx = (yy * w + xx).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    out = ((1 - wx) * (1 - wy) * take(y0, x0)
           + wx * (1 - wy) * take(y0, x1)
           + (1 - wx) * wy * take(y1, x0)
           + wx * wy * take(y1, x1))
    return out


def _grid(h: int, w: int, dtype, device) -> tuple[torch.Tensor, torch.Tensor]:
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=dtype, device=device),
        torch.arange(w, dtype=dtype, device=device),
        indexing="ij",
    )
    return xs, ys


def warp_image(img: torch.Tensor, disp: torch.Tensor,
               mode: BoundaryMode | str = BoundaryMode.CLAMP) -> torch.Tensor:
    """Warp an image by a displacement field: out(x) = img(x + u(x)).

    Bilinear interpolation; differentiable in both the image values and the
    displacement.
    """
    mode = _as_mode(mode)
    imgs, single_i = _batched(img, "image")
    disps, single_d = _batched(disp, "field")
    if imgs.shape[-2:] != disps.shape[-2:]:
        raise ValueError(
            f"image grid {tuple(imgs.shape[-2:])} != field grid {tuple(disps.shape[-2:])}")
    if imgs.shape[0] != disps.shape[0]:
        raise ValueError(f"batch mismatch: {imgs.shape[0]} images vs {disps.shape[0]} fields")
    _check_finite("image", imgs)
    _check_finite("displacement", disps)
    h, w = imgs.shape[-2:]
    xs, ys = _grid(h, w, disps.dtype, disps.device)
    out = _bilinear_sample(imgs, xs + disps[:, 0], ys + disps[:, 1], mode)
    return out[0, 0] if (single_i and single_d) else out


def compose(outer: torch.Tensor, inner: torch.Tensor,
            mode: BoundaryMode | str = BoundaryMode.CLAMP) -> torch.Tensor:
    """Composition (outer o inner) of two deformations given as displacements.

    u(x) = u_inner(x) + u_outer(x + u_inner(x)), i.e. the map
    x -> phi_outer(phi_inner(x)).
    """
    mode = _as_mode(mode)
    ua, single_a = _batched(outer, "field")
    ub, single_b = _batched(inner, "field")
    if ua.shape != ub.shape:
        raise ValueError(f"field shapes differ: {tuple(ua.shape)} vs {tuple(ub.shape)}")
    _check_finite("outer displacement", ua)
    _check_finite("inner displacement", ub)
    h, w = ua.shape[-2:]
    xs, ys = _grid(h, w, ua.dtype, ua.device)
    sampled = _bilinear_sample(ua, xs + ub[:, 0], ys + ub[:, 1], mode)
    out = ub + sampled
    return out[0] if (single_a and single_b) else out


def exp_map(vel: torch.Tensor, num_squarings: int = 6,
            mode: BoundaryMode | str = BoundaryMode.CLAMP) -> torch.Tensor:
    """Exponential map of a stationary velocity field by scaling and squaring.

    Scales the field by 2**-num_squarings, then composes the small
    deformation with itself num_squarings times; approximates the time-1
    flow of the field.
    """
    if num_squarings < 1:
        raise ValueError(f"num_squarings must be >= 1, got {num_squarings}")
    mode = _as_mode(mode)
    v, single = _batched(vel, "field")
    _check_finite("velocity", v)
    h, w = v.shape[-2:]
    xs, ys = _grid(h, w, v.dtype, v.device)
    u = v * (2.0 ** -num_squarings)
    for _ in range(num_squarings):
        u = u + _bilinear_sample(u, xs + u[:, 0], ys + u[:, 1], mode)
    return u[0] if single else u


def jacobian_determinant(disp: torch.Tensor) -> torch.Tensor:
    """Per-pixel Jacobian determinant of phi(x) = x + u(x).

    Central differences on interior pixels, one-sided on the border; exact
    on affine deformations. Returns a (H, W) map (batched: (B, H, W)).
    """
    u, single = _batched(disp, "field")
    h, w = u.shape[-2:]
    if h < 3 or w < 3:
        raise ValueError(f"grid must be at least 3x3, got {h}x{w}")
    _check_finite("displacement", u)
    ux, uy = u[:, 0], u[:, 1]
    dux_dy, dux_dx = torch.gradient(ux, dim=(1, 2))
    duy_dy, duy_dx = torch.gradient(uy, dim=(1, 2))
    det = (1 + dux_dx) * (1 + duy_dy) - dux_dy * duy_dx
    return det[0] if single else det


def neg_jacobian_fraction(disp: torch.Tensor) -> float:
    """Fraction of pixels whose Jacobian determinant is negative (folding)."""
    det = jacobian_determinant(disp)
    return (det < 0).double().mean().item()


def smoothness_energy(vel: torch.Tensor) -> torch.Tensor:
    """Mean squared forward-difference gradient energy of a vector field.

    Sum over both components and both difference directions of squared
    forward differences, divided by the pixel count. Differentiable;
    zero iff the field is constant. Leading batch dims are preserved.
    """
    if vel.dim() < 3 or vel.shape[-3] != 2:
        raise ValueError(f"field must be (..., 2, H, W), got shape {tuple(vel.shape)}")
    if vel.shape[-2] < 2 or vel.shape[-1] < 2:
        raise ValueError("grid must be at least 2x2")
    _check_finite("velocity", vel)
    h, w = vel.shape[-2:]
    dx = vel[..., :, 1:] - vel[..., :, :-1]
    dy = vel[..., 1:, :] - vel[..., :-1, :]
    return (dx.square().sum(dim=(-3, -2, -1)) + dy.square().sum(dim=(-3, -2, -1))) / (h * w)


def identity_displacement(h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """The zero displacement field (identity deformation) on an h x w grid."""
    return torch.zeros(2, h, w, dtype=dtype)
