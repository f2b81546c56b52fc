"""Patch tokens for multi-view image stacks and pixel-aligned Gaussian decoding.

A view stack ``(V, H, W, C)`` is cut into ``p x p`` patches in raster order,
view by view; each patch flattens to a ``C * p * p`` vector in (row, column,
channel) order. Leading batch dimensions are carried through untouched.

Decoded Gaussians use 14 raw channels per pixel::

    0       ray distance       t = near + sigmoid(raw) * (far - near)
    1:4     log scale          s = exp(clamp(raw, -8, 1))
    4:8     quaternion (wxyz)  normalized, identity when the raw vector is zero
    8       opacity            sigmoid(raw)
    9:12    color              sigmoid(raw)
    12:14   reserved           ignored
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from einops import rearrange

from .camera import ViewRig, pixel_rays
from .splat import SplatCloud

GAUSSIAN_CHANNELS = 14
DEFAULT_NEAR = 1.5
DEFAULT_FAR = 4.5
LOG_SCALE_RANGE = (-8.0, 1.0)


class TokenizerError(ValueError):
    pass


@dataclass
class TokenGrid:
    tokens: torch.Tensor  # (..., V * n_patches, D)
    patch_size: int
    n_views: int
    grid_shape: tuple[int, int]  # patches per view along (rows, cols)

    @property
    def patches_per_view(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]

    def __len__(self) -> int:
        return self.tokens.shape[-2]

    def view_index(self, token: int) -> int:
        return token // self.patches_per_view

    def patch_index(self, token: int) -> tuple[int, int]:
        k = token % self.patches_per_view
        return divmod(k, self.grid_shape[1])


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def _check_divisible(h: int, w: int, p: int) -> None:
    if p < 1 or h % p or w % p:
        raise TokenizerError(f"image size {h}x{w} is not divisible by patch size {p}")


def to_patches(stack, p: int) -> torch.Tensor:
    """``(..., V, H, W, C)`` -> ``(..., V * HW/p^2, p * p * C)``."""
    x = _as_tensor(stack)
    _check_divisible(x.shape[-3], x.shape[-2], p)
    return rearrange(x, "... v (h p1) (w p2) c -> ... (v h w) (p1 p2 c)", p1=p, p2=p)


def from_patches(tokens, p: int, n_views: int, height: int, width: int) -> torch.Tensor:
    """Inverse of :func:`to_patches`."""
    x = _as_tensor(tokens)
    _check_divisible(height, width, p)
    expected = n_views * (height // p) * (width // p)
    if x.shape[-2] != expected:
        raise TokenizerError(f"expected {expected} tokens, got {x.shape[-2]}")
    return rearrange(x, "... (v h w) (p1 p2 c) -> ... v (h p1) (w p2) c",
                     v=n_views, h=height // p, w=width // p, p1=p, p2=p)


def patchify(images, pluckers, p: int, embed=None) -> TokenGrid:
    """Concatenate RGB with Plücker rays per pixel and cut into patch tokens.

    ``embed`` maps the ``9 p^2`` raw vector to the model width; without it the
    raw vectors are returned.
    """
    images, pluckers = _as_tensor(images), _as_tensor(pluckers)
    if images.shape[:-1] != pluckers.shape[:-1] or images.shape[-1] != 3 or pluckers.shape[-1] != 6:
        raise TokenizerError(f"shape mismatch: images {tuple(images.shape)}, "
                             f"pluckers {tuple(pluckers.shape)}")
    v, h, w = images.shape[-4:-1]
    raw = to_patches(torch.cat([images, pluckers.to(images.dtype)], dim=-1), p)
    tokens = embed(raw) if embed is not None else raw
    return TokenGrid(tokens, p, v, (h // p, w // p))


def unpatchify(grid: TokenGrid, height: int, width: int) -> torch.Tensor:
    """Raw tokens back to the ``(..., V, H, W, C)`` stack."""
    return from_patches(grid.tokens, grid.patch_size, grid.n_views, height, width)


def rig_rays(rig: ViewRig, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pixel origins and unit directions, each ``(V, H, W, 3)``."""
    origins, dirs = [], []
    for view in rig:
        c, d = pixel_rays(view.intrinsics, view.pose)
        origins.append(np.broadcast_to(c, d.shape))
        dirs.append(d)
    return (torch.as_tensor(np.stack(origins), dtype=dtype),
            torch.as_tensor(np.stack(dirs), dtype=dtype))


def activate(raw: torch.Tensor, origins: torch.Tensor, dirs: torch.Tensor,
             near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR) -> SplatCloud:
    """Raw per-pixel channels ``(..., 14)`` plus matching rays -> flat cloud."""
    if raw.shape[-1] != GAUSSIAN_CHANNELS:
        raise TokenizerError(f"expected {GAUSSIAN_CHANNELS} channels, got {raw.shape[-1]}")
    if raw.shape[:-1] != dirs.shape[:-1]:
        raise TokenizerError(f"raw grid {tuple(raw.shape[:-1])} does not match rays "
                             f"{tuple(dirs.shape[:-1])}")
    raw = raw.reshape(-1, GAUSSIAN_CHANNELS)
    o = origins.reshape(-1, 3).to(raw.dtype)
    d = dirs.reshape(-1, 3).to(raw.dtype)
    t = near + torch.sigmoid(raw[:, 0:1]) * (far - near)
    scales = torch.exp(torch.clamp(raw[:, 1:4], *LOG_SCALE_RANGE))
    q = raw[:, 4:8]
    norm = q.norm(dim=1, keepdim=True)
    identity = torch.zeros_like(q)
    identity[:, 0] = 1.0
    rotations = torch.where(norm > 1e-12, q / norm.clamp_min(1e-12), identity)
    return SplatCloud(o + t * d, scales, rotations, torch.sigmoid(raw[:, 8]),
                      torch.sigmoid(raw[:, 9:12]))


def unpatchify_gaussians(grid: TokenGrid, decode, rig: ViewRig, near: float = DEFAULT_NEAR,
                         far: float = DEFAULT_FAR) -> SplatCloud:
    """Decode tokens to ``14 p^2`` channels, unpatchify, and place splats on pixel rays."""
    if len(rig) != grid.n_views:
        raise TokenizerError(f"rig has {len(rig)} views, tokens cover {grid.n_views}")
    intr = rig[0].intrinsics
    p = grid.patch_size
    if (intr.height // p, intr.width // p) != grid.grid_shape or intr.height % p or intr.width % p:
        raise TokenizerError("token grid does not match the rig's image size")
    raw = decode(grid.tokens) if decode is not None else grid.tokens
    raw = from_patches(raw, p, grid.n_views, intr.height, intr.width)
    origins, dirs = rig_rays(rig, raw.dtype)
    return activate(raw, origins, dirs, near, far)
