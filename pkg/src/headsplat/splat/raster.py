"""Alpha-compositing kernels (numba).

Splats arrive already projected and sorted near-to-far. Each carries a 2D
mean, the upper triangle of its inverse 2D covariance ("conic"), an opacity,
an RGB color and an inclusive pixel box ``x0, x1, y0, y1``.

Compositing is splat-major: splats are visited in depth order and each one
updates only the pixels in its box, so the cost is the total box area rather
than pixels times splats. The forward pass records the transmittance each
splat saw at every pixel of its box (or -1 when it did not contribute). The
backward pass walks splats back-to-front with those records, carrying the
color composited *behind* each splat, so it never divides by ``1 - alpha``
and fully opaque splats need no special care.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

ALPHA_MIN = 1.0 / 255.0
# A pixel stops accepting splats once its transmittance drops below this. The
# remainder still goes to the background, so weights always sum to one.
T_MIN = 1e-7


@njit(cache=True)
def box_offsets(bbox):
    n = bbox.shape[0]
    off = np.zeros(n + 1, np.int64)
    for i in range(n):
        w = bbox[i, 1] - bbox[i, 0] + 1
        h = bbox[i, 3] - bbox[i, 2] + 1
        off[i + 1] = off[i] + (w * h if w > 0 and h > 0 else 0)
    return off


@njit(cache=True)
def _alpha(i, px, py, means, conics, opacities, alpha_min):
    dx = px + 0.5 - means[i, 0]
    dy = py + 0.5 - means[i, 1]
    power = 0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy) + conics[i, 1] * dx * dy
    if power < 0.0:
        return -1.0, 0.0, 0.0, 0.0
    g = math.exp(-power)
    a = opacities[i] * g
    if a > 1.0:
        a = 1.0
    if a < alpha_min:
        return -1.0, 0.0, 0.0, 0.0
    return a, g, dx, dy


@njit(cache=True)
def rasterize_forward(means, conics, opacities, colors, bbox, height, width,
                      background, alpha_min, t_min):
    off = box_offsets(bbox)
    records = np.empty(off[-1])
    T = np.ones((height, width))
    acc = np.zeros((height, width, 3))
    for i in range(means.shape[0]):
        x0, x1, y0, y1 = bbox[i, 0], bbox[i, 1], bbox[i, 2], bbox[i, 3]
        r = off[i]
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                t = T[py, px]
                if t < t_min:
                    records[r] = -1.0
                    r += 1
                    continue
                a, _, _, _ = _alpha(i, px, py, means, conics, opacities, alpha_min)
                if a < 0.0:
                    records[r] = -1.0
                    r += 1
                    continue
                records[r] = t
                r += 1
                w = a * t
                acc[py, px, 0] += w * colors[i, 0]
                acc[py, px, 1] += w * colors[i, 1]
                acc[py, px, 2] += w * colors[i, 2]
                T[py, px] = t * (1.0 - a)
    rgb = np.empty((height, width, 3), means.dtype)
    for py in range(height):
        for px in range(width):
            for c in range(3):
                rgb[py, px, c] = acc[py, px, c] + T[py, px] * background[c]
    return rgb, T.astype(means.dtype), records


@njit(cache=True)
def rasterize_backward(means, conics, opacities, colors, bbox, height, width,
                       background, alpha_min, records, grad_rgb, grad_alpha):
    n = means.shape[0]
    off = box_offsets(bbox)
    d_means = np.zeros((n, 2), means.dtype)
    d_conics = np.zeros((n, 3), means.dtype)
    d_opac = np.zeros(n, means.dtype)
    d_colors = np.zeros((n, 3), means.dtype)
    # S: color composited behind the current splat; P: transmittance behind it.
    S = np.empty((height, width, 3))
    for py in range(height):
        for px in range(width):
            for c in range(3):
                S[py, px, c] = background[c]
    P = np.ones((height, width))
    for i in range(n - 1, -1, -1):
        x0, x1, y0, y1 = bbox[i, 0], bbox[i, 1], bbox[i, 2], bbox[i, 3]
        cr, cg, cb = colors[i, 0], colors[i, 1], colors[i, 2]
        A, B, C = conics[i, 0], conics[i, 1], conics[i, 2]
        o = opacities[i]
        dm0 = 0.0
        dm1 = 0.0
        dc0 = 0.0
        dc1 = 0.0
        dc2 = 0.0
        do = 0.0
        dcol0 = 0.0
        dcol1 = 0.0
        dcol2 = 0.0
        r = off[i]
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                Ti = records[r]
                r += 1
                if Ti < 0.0:
                    continue
                a, g, dx, dy = _alpha(i, px, py, means, conics, opacities, alpha_min)
                gr = grad_rgb[py, px, 0]
                gg = grad_rgb[py, px, 1]
                gb = grad_rgb[py, px, 2]
                sr, sg, sb = S[py, px, 0], S[py, px, 1], S[py, px, 2]
                p = P[py, px]
                w = a * Ti
                dcol0 += gr * w
                dcol1 += gg * w
                dcol2 += gb * w
                d_a = Ti * (gr * (cr - sr) + gg * (cg - sg) + gb * (cb - sb)
                            + grad_alpha[py, px] * p)
                S[py, px, 0] = a * cr + (1.0 - a) * sr
                S[py, px, 1] = a * cg + (1.0 - a) * sg
                S[py, px, 2] = a * cb + (1.0 - a) * sb
                P[py, px] = p * (1.0 - a)
                if o * g > 1.0:
                    continue  # clamped: locally constant
                do += d_a * g
                d_power = -d_a * a
                dc0 += d_power * 0.5 * dx * dx
                dc1 += d_power * dx * dy
                dc2 += d_power * 0.5 * dy * dy
                dm0 -= d_power * (A * dx + B * dy)
                dm1 -= d_power * (B * dx + C * dy)
        d_means[i, 0] = dm0
        d_means[i, 1] = dm1
        d_conics[i, 0] = dc0
        d_conics[i, 1] = dc1
        d_conics[i, 2] = dc2
        d_opac[i] = do
        d_colors[i, 0] = dcol0
        d_colors[i, 1] = dcol1
        d_colors[i, 2] = dcol2
    return d_means, d_conics, d_opac, d_colors


@njit(cache=True)
def contributor_ids(means, conics, opacities, bbox, height, width, alpha_min, t_min):
    """Ids of the splats composited at every pixel, near-to-far, padded with -1: (H, W, K)."""
    n = means.shape[0]
    count = np.zeros((height, width), np.int64)
    T = np.ones((height, width))
    for i in range(n):
        for py in range(bbox[i, 2], bbox[i, 3] + 1):
            for px in range(bbox[i, 0], bbox[i, 1] + 1):
                if T[py, px] < t_min:
                    continue
                a, _, _, _ = _alpha(i, px, py, means, conics, opacities, alpha_min)
                if a < 0.0:
                    continue
                count[py, px] += 1
                T[py, px] *= 1.0 - a
    out = np.full((height, width, max(1, count.max())), -1, np.int64)
    count[:] = 0
    T[:] = 1.0
    for i in range(n):
        for py in range(bbox[i, 2], bbox[i, 3] + 1):
            for px in range(bbox[i, 0], bbox[i, 1] + 1):
                if T[py, px] < t_min:
                    continue
                a, _, _, _ = _alpha(i, px, py, means, conics, opacities, alpha_min)
                if a < 0.0:
                    continue
                out[py, px, count[py, px]] = i
                count[py, px] += 1
                T[py, px] *= 1.0 - a
    return out


@njit(cache=True)
def pixel_weights(means, conics, opacities, bbox, alpha_min, t_min, px, py):
    """Compositing weights at one pixel: (splat ids, weights, background weight)."""
    n = means.shape[0]
    out_i = np.empty(n, np.int64)
    out_w = np.empty(n)
    T = 1.0
    m = 0
    for i in range(n):
        if px < bbox[i, 0] or px > bbox[i, 1] or py < bbox[i, 2] or py > bbox[i, 3]:
            continue
        if T < t_min:
            break
        a, _, _, _ = _alpha(i, px, py, means, conics, opacities, alpha_min)
        if a < 0.0:
            continue
        out_i[m] = i
        out_w[m] = a * T
        m += 1
        T *= 1.0 - a
    return out_i[:m], out_w[:m], T
