"""Forward splatting renderer and its gradients.

Rendering is split in two stages:

1. :func:`project` maps every 3D Gaussian to screen space (mean, conic, depth)
   with the local-affine (EWA) approximation of perspective
   (:mod:`.projection`).
2. The depth-sorted 2D Gaussians are alpha-composited by the kernels in
   :mod:`.raster`.

Both stages have hand-derived backward passes, joined in one autograd node
per view so the torch graph stays small during training.

The only approximations are the global per-view depth sort (by splat center)
and skipping contributions whose alpha falls below 1/255. Each splat's pixel
box is the exact axis-aligned extent of the ellipse where its alpha can reach
that threshold (about 3.3 sigma for an opaque splat), so the box itself never
drops a contribution the threshold would keep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..camera import CameraPose, Intrinsics
from . import projection, raster
from .cloud import SplatCloud

LOW_PASS = 0.3   # px^2 added to the projected covariance diagonal
Z_NEAR = 0.05


@dataclass
class RenderedImage:
    rgb: np.ndarray    # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    n_degenerate: int = 0


@dataclass
class Projection:
    means2d: np.ndarray     # (M, 2) visible splats, near-to-far
    conics: np.ndarray      # (M, 3)
    opacities: np.ndarray
    colors: np.ndarray
    bbox: np.ndarray        # (M, 4) inclusive pixel box x0, x1, y0, y1
    index: np.ndarray       # (M,) indices into the source cloud
    n_degenerate: int


def _np64(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.ascontiguousarray(x, dtype=np.float64)


def _camera(intr: Intrinsics, pose: CameraPose):
    cx, cy = intr.principal_point
    return (np.ascontiguousarray(pose.rotation, dtype=np.float64),
            np.ascontiguousarray(pose.translation, dtype=np.float64), float(intr.focal),
            float(cx), float(cy))


def project(cloud: SplatCloud, intr: Intrinsics, pose: CameraPose) -> Projection:
    """Screen-space splats visible in a view, sorted near-to-far (no gradients)."""
    pos, scales, rots, opac, cols = (_np64(getattr(cloud, f)) for f in
                                     ("positions", "scales", "rotations", "opacities", "colors"))
    Rc, tc, f, cx, cy = _camera(intr, pose)
    means, conics, depth, bbox, flag = projection.project_forward(
        pos.reshape(-1, 3), scales.reshape(-1, 3), rots.reshape(-1, 4), opac.reshape(-1),
        Rc, tc, f, cx, cy, intr.width, intr.height, LOW_PASS, raster.ALPHA_MIN, Z_NEAR)
    keep = np.nonzero(flag == 1)[0]
    order = keep[np.argsort(depth[keep], kind="stable")]
    return Projection(means[order], conics[order], opac[order], cols[order],
                      np.ascontiguousarray(bbox[order]), order, int((flag == -1).sum()))


class _RenderView(torch.autograd.Function):
    """Project and composite one view; the backward pass is analytic end to end."""

    @staticmethod
    def forward(ctx, positions, scales, rotations, opacities, colors, intr, pose, background):
        cloud = SplatCloud(positions, scales, rotations, opacities, colors)
        proj = project(cloud, intr, pose)
        bg = np.asarray(background, dtype=np.float64)
        rgb, trans, records = raster.rasterize_forward(
            proj.means2d, proj.conics, proj.opacities, proj.colors, proj.bbox,
            intr.height, intr.width, bg, raster.ALPHA_MIN, raster.T_MIN)
        ctx.saved = (proj, intr, pose, bg, records)
        ctx.inputs = tuple(_np64(x) for x in (positions, scales, rotations, opacities, colors))
        ctx.dtype = dtype = positions.dtype
        n_bad = torch.tensor(proj.n_degenerate)
        ctx.mark_non_differentiable(n_bad)
        return torch.from_numpy(rgb).to(dtype), torch.from_numpy(1.0 - trans).to(dtype), n_bad

    @staticmethod
    def backward(ctx, grad_rgb, grad_alpha, _):
        proj, intr, pose, bg, records = ctx.saved
        h, w = intr.height, intr.width
        g_rgb = np.zeros((h, w, 3)) if grad_rgb is None else _np64(grad_rgb)
        g_alpha = np.zeros((h, w)) if grad_alpha is None else _np64(grad_alpha)
        d_means, d_conics, d_opac_v, d_col_v = raster.rasterize_backward(
            proj.means2d, proj.conics, proj.opacities, proj.colors, proj.bbox, h, w, bg,
            raster.ALPHA_MIN, records, g_rgb, g_alpha)
        positions, scales, rotations, opacities, colors = ctx.inputs
        Rc, tc, f, _, _ = _camera(intr, pose)
        d_pos, d_scale, d_rot = projection.project_backward(
            positions, scales, rotations, Rc, tc, f, LOW_PASS, proj.index, d_means, d_conics)
        n = positions.shape[0]
        d_opac = np.zeros(n)
        d_col = np.zeros((n, 3))
        d_opac[proj.index] = d_opac_v
        d_col[proj.index] = d_col_v
        dtype = ctx.dtype
        out = [torch.from_numpy(g).to(dtype) for g in (d_pos, d_scale, d_rot, d_opac, d_col)]
        return (*out, None, None, None)


def render_torch(cloud: SplatCloud, intr: Intrinsics, pose: CameraPose,
                 background=(0.0, 0.0, 0.0)) -> tuple[torch.Tensor, torch.Tensor, int]:
    """Differentiable render; returns ``(rgb (H,W,3), alpha (H,W), n_degenerate)``."""
    if not cloud.is_torch:
        cloud = cloud.torch(torch.float64)
    rgb, alpha, n_bad = _RenderView.apply(cloud.positions, cloud.scales, cloud.rotations,
                                          cloud.opacities, cloud.colors, intr, pose,
                                          tuple(background))
    return rgb, alpha, int(n_bad)


def render(cloud: SplatCloud, intr: Intrinsics, pose: CameraPose,
           background=(0.0, 0.0, 0.0)) -> RenderedImage:
    if not cloud.is_torch:
        cloud = cloud.torch(torch.float64)
    with torch.no_grad():
        rgb, alpha, n_bad = render_torch(cloud, intr, pose, background)
    rgb = np.clip(rgb.numpy().astype(np.float64), 0.0, 1.0)
    alpha = np.clip(alpha.numpy().astype(np.float64), 0.0, 1.0)
    return RenderedImage(rgb, alpha, n_bad)


def render_gradients(cloud: SplatCloud, intr: Intrinsics, pose: CameraPose,
                     upstream: np.ndarray, background=(0.0, 0.0, 0.0)) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream * rgb)`` for every splat parameter (float64)."""
    params = cloud.numpy().torch(torch.float64, requires_grad=True)
    rgb, _, _ = render_torch(params, intr, pose, background)
    up = torch.as_tensor(np.asarray(upstream, dtype=np.float64))
    (rgb * up).sum().backward()
    names = ("positions", "scales", "rotations", "opacities", "colors")
    out = {}
    for name in names:
        g = getattr(params, name).grad
        out[name] = np.zeros(getattr(params, name).shape) if g is None else g.numpy().copy()
    return out


def compositing_weights(cloud: SplatCloud, intr: Intrinsics, pose: CameraPose,
                        px: int, py: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-splat compositing weights at pixel ``(px, py)``: (cloud indices, weights, bg weight)."""
    proj = project(cloud, intr, pose)
    local, w, T = raster.pixel_weights(proj.means2d, proj.conics, proj.opacities, proj.bbox, raster.ALPHA_MIN, raster.T_MIN, px, py)
    return proj.index[local], w, float(T)


def render_views(cloud: SplatCloud, rig, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Render every camera of a rig to an array of shape (V, H, W, 3)."""
    return np.stack([render(cloud, v.intrinsics, v.pose, background).rgb for v in rig])


def contributors(cloud: SplatCloud, intr: Intrinsics, pose: CameraPose) -> np.ndarray:
    """Cloud indices composited at each pixel, near-to-far, padded with -1: (H, W, K).

    Two parameter settings with equal contributor sets lie on the same smooth
    piece of the (piecewise-smooth) render function.
    """
    proj = project(cloud, intr, pose)
    local = raster.contributor_ids(proj.means2d, proj.conics, proj.opacities, proj.bbox, intr.height, intr.width,
                                   raster.ALPHA_MIN, raster.T_MIN)
    return np.where(local >= 0, proj.index[np.maximum(local, 0)], -1)
