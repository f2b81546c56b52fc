"""Independent reference computations used by several test modules."""

from __future__ import annotations

import numpy as np

from headsplat.camera import CameraPose, Intrinsics
from headsplat.splat import SplatCloud, contributors, quat_to_rotmat, render, render_gradients

FIELDS = ("positions", "scales", "rotations", "opacities", "colors")


def random_cloud(rng: np.random.Generator, n: int = 5, spread: float = 0.4) -> SplatCloud:
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SplatCloud(rng.uniform(-spread, spread, (n, 3)), rng.uniform(0.1, 0.3, (n, 3)), q,
                      rng.uniform(0.3, 0.95, n), rng.uniform(0.0, 1.0, (n, 3)))


def _replace(cloud: SplatCloud, name: str, value) -> SplatCloud:
    parts = {f: getattr(cloud, f) for f in FIELDS}
    parts[name] = value
    return SplatCloud(**parts)


def fd_gradients(cloud: SplatCloud, intr: Intrinsics, pose: CameraPose, upstream: np.ndarray,
                 h: float = 1e-4, background=(0.0, 0.0, 0.0)):
    """Central differences of ``sum(upstream * render)``.

    The render is piecewise smooth: a splat's footprint and the compositing
    cutoff switch discretely. When the +h and -h probes land on different
    pieces (different contributor sets) the stencil is shrunk by 10x until
    both sides agree. Returns (gradients, number of shrinks).
    """
    f = lambda c: float((render_raw(c, intr, pose, background) * upstream).sum())  # noqa: E731
    out, shrinks = {}, 0
    for name in FIELDS:
        arr = np.asarray(getattr(cloud, name), np.float64)
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            step = h
            while True:
                a, b = arr.copy(), arr.copy()
                a[idx] += step
                b[idx] -= step
                cp, cm = _replace(cloud, name, a), _replace(cloud, name, b)
                if step < 1e-9 or np.array_equal(contributors(cp, intr, pose),
                                                  contributors(cm, intr, pose)):
                    break
                step /= 10
                shrinks += 1
            num[idx] = (f(cp) - f(cm)) / (2 * step)
        out[name] = num
    return out, shrinks


def render_raw(cloud, intr, pose, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Unclipped render (the differentiable quantity)."""
    import torch

    from headsplat.splat import render_torch

    with torch.no_grad():
        rgb, _, _ = render_torch(cloud.numpy().torch(torch.float64), intr, pose, background)
    return rgb.numpy()


def gradient_rel_errors(cloud, intr, pose, upstream):
    analytic = render_gradients(cloud, intr, pose, upstream)
    numeric, shrinks = fd_gradients(cloud, intr, pose, upstream)
    errs = {}
    for name in FIELDS:
        scale = max(np.abs(numeric[name]).max(), 1e-8)
        errs[name] = float(np.abs(numeric[name] - analytic[name]).max() / scale)
    return errs, shrinks


def composite_pixel(cloud: SplatCloud, intr: Intrinsics, pose: CameraPose, px: int, py: int,
                    background, low_pass: float = 0.3, alpha_min: float = 1 / 255):
    """Hand-written front-to-back compositing sum at one pixel, straight from the definitions.

    Returns (color, weights by cloud index, background weight).
    """
    c = cloud.numpy()
    f = intr.focal
    cx, cy = intr.principal_point
    u, v = px + 0.5, py + 0.5
    items = []
    for i in range(len(c)):
        xc = pose.rotation @ c.positions[i] + pose.translation
        if xc[2] <= 0.05:
            continue
        R = quat_to_rotmat(c.rotations[i])
        S = np.diag(c.scales[i] ** 2)
        cov_c = pose.rotation @ R @ S @ R.T @ pose.rotation.T
        x, y, z = xc
        J = np.array([[f / z, 0, -f * x / z ** 2], [0, f / z, -f * y / z ** 2]])
        cov2 = J @ cov_c @ J.T + low_pass * np.eye(2)
        mean = np.array([f * x / z + cx, f * y / z + cy])
        d = np.array([u, v]) - mean
        a = min(1.0, c.opacities[i] * np.exp(-0.5 * d @ np.linalg.solve(cov2, d)))
        items.append((z, i, a))
    items.sort(key=lambda it: it[0])
    T, color, weights = 1.0, np.zeros(3), {}
    for _, i, a in items:
        if a < alpha_min or T < 1e-7:
            continue
        weights[i] = T * a
        color += T * a * c.colors[i]
        T *= 1 - a
    color += T * np.asarray(background, np.float64)
    return color, weights, T


def ssim_naive(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5,
               max_val: float = 1.0) -> float:
    """Double-loop sliding-window SSIM on a single channel."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (0.01 * max_val) ** 2, (0.03 * max_val) ** 2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                        / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))
