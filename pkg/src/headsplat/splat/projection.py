"""EWA projection of 3D Gaussians to screen space, with its hand-derived backward.

For a splat with position ``p``, per-axis scale ``s`` and quaternion ``q``
seen by a camera ``x_cam = R p + t`` with focal ``f``::

    (u, v)  = f (x, y) / z + (cx, cy)
    J       = [[f/z, 0, -f x/z^2], [0, f/z, -f y/z^2]]
    Sigma2  = (J R) Rq diag(s^2) Rq^T (J R)^T + low_pass * I
    conic   = inverse(Sigma2) stored as (A, B, C) = (c, -b, a) / det

All arithmetic is float64.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _quat_rot(q, R):
    """Fill ``R`` from quaternion ``q`` (normalized here); return the norm and unit components."""
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    w, x, y, z = q[0] / n, q[1] / n, q[2] / n, q[3] / n
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)
    return n, w, x, y, z


@njit(cache=True)
def _screen_terms(p, s, q, Rc, tc, f, T, Sigma, M, Rq, TS):
    """Camera-space point; fills J R (T), world covariance (Sigma), its factor M and T Sigma."""
    xc = Rc[0, 0] * p[0] + Rc[0, 1] * p[1] + Rc[0, 2] * p[2] + tc[0]
    yc = Rc[1, 0] * p[0] + Rc[1, 1] * p[1] + Rc[1, 2] * p[2] + tc[1]
    zc = Rc[2, 0] * p[0] + Rc[2, 1] * p[1] + Rc[2, 2] * p[2] + tc[2]
    j00 = f / zc
    j02 = -f * xc / (zc * zc)
    j12 = -f * yc / (zc * zc)
    for j in range(3):
        T[0, j] = j00 * Rc[0, j] + j02 * Rc[2, j]
        T[1, j] = j00 * Rc[1, j] + j12 * Rc[2, j]
    _quat_rot(q, Rq)
    for i in range(3):
        for j in range(3):
            M[i, j] = Rq[i, j] * s[j]
    for i in range(3):
        for j in range(i, 3):
            v = M[i, 0] * M[j, 0] + M[i, 1] * M[j, 1] + M[i, 2] * M[j, 2]
            Sigma[i, j] = v
            Sigma[j, i] = v
    for r in range(2):
        for j in range(3):
            TS[r, j] = T[r, 0] * Sigma[0, j] + T[r, 1] * Sigma[1, j] + T[r, 2] * Sigma[2, j]
    a = TS[0, 0] * T[0, 0] + TS[0, 1] * T[0, 1] + TS[0, 2] * T[0, 2]
    b = TS[0, 0] * T[1, 0] + TS[0, 1] * T[1, 1] + TS[0, 2] * T[1, 2]
    c = TS[1, 0] * T[1, 0] + TS[1, 1] * T[1, 1] + TS[1, 2] * T[1, 2]
    return xc, yc, zc, a, b, c


@njit(cache=True)
def project_forward(positions, scales, rotations, opacities, Rc, tc, f, cx, cy, width, height,
                    low_pass, alpha_min, z_near):
    """Screen-space means, conics, depths, pixel boxes and a visibility flag per splat.

    Flag values: 1 visible, 0 culled (behind the near plane, too faint or
    off-screen), -1 degenerate (non-invertible projected covariance).
    """
    n = positions.shape[0]
    means = np.zeros((n, 2))
    conics = np.zeros((n, 3))
    depth = np.zeros(n)
    bbox = np.zeros((n, 4), np.int64)
    flag = np.zeros(n, np.int64)
    T = np.empty((2, 3))
    TS = np.empty((2, 3))
    Sigma = np.empty((3, 3))
    M = np.empty((3, 3))
    Rq = np.empty((3, 3))
    for i in range(n):
        zc = (Rc[2, 0] * positions[i, 0] + Rc[2, 1] * positions[i, 1]
              + Rc[2, 2] * positions[i, 2] + tc[2])
        depth[i] = zc
        if not zc > z_near:
            continue
        xc, yc, zc, a, b, c = _screen_terms(positions[i], scales[i], rotations[i], Rc, tc, f,
                                            T, Sigma, M, Rq, TS)
        a += low_pass
        c += low_pass
        det = a * c - b * b
        if not (math.isfinite(det) and det > 1e-12):
            flag[i] = -1
            continue
        o = opacities[i]
        if not o > alpha_min:
            continue
        p_max = math.log(o / alpha_min)  # beyond this Mahalanobis power alpha < alpha_min
        u = f * xc / zc + cx
        v = f * yc / zc + cy
        rx = math.sqrt(2.0 * p_max * a)
        ry = math.sqrt(2.0 * p_max * c)
        x0 = math.ceil(u - rx - 0.5)
        x1 = math.floor(u + rx - 0.5)
        y0 = math.ceil(v - ry - 0.5)
        y1 = math.floor(v + ry - 0.5)
        if x1 < 0 or x0 > width - 1 or y1 < 0 or y0 > height - 1:
            continue
        means[i, 0] = u
        means[i, 1] = v
        conics[i, 0] = c / det
        conics[i, 1] = -b / det
        conics[i, 2] = a / det
        bbox[i, 0] = max(x0, 0)
        bbox[i, 1] = min(x1, width - 1)
        bbox[i, 2] = max(y0, 0)
        bbox[i, 3] = min(y1, height - 1)
        flag[i] = 1
    return means, conics, depth, bbox, flag


@njit(cache=True)
def project_backward(positions, scales, rotations, Rc, tc, f, low_pass, index, d_means, d_conics):
    """Chain screen-space gradients of the splats in ``index`` back to p, s and raw q."""
    n = positions.shape[0]
    d_pos = np.zeros((n, 3))
    d_scale = np.zeros((n, 3))
    d_rot = np.zeros((n, 4))
    T = np.empty((2, 3))
    TS = np.empty((2, 3))
    Sigma = np.empty((3, 3))
    M = np.empty((3, 3))
    Rq = np.empty((3, 3))
    G2T = np.empty((2, 3))
    dSigma = np.empty((3, 3))
    dM = np.empty((3, 3))
    gR = np.empty((3, 3))
    dT = np.empty((2, 3))
    for k in range(index.shape[0]):
        i = index[k]
        q = rotations[i]
        xc, yc, zc, a, b, c = _screen_terms(positions[i], scales[i], q, Rc, tc, f,
                                            T, Sigma, M, Rq, TS)
        a += low_pass
        c += low_pass
        det = a * c - b * b
        id2 = 1.0 / (det * det)
        gA, gB, gC = d_conics[k, 0], d_conics[k, 1], d_conics[k, 2]
        ga = -gA * c * c * id2 + gB * b * c * id2 + gC * (1.0 / det - a * c * id2)
        gb = 2.0 * gA * b * c * id2 + gB * (-1.0 / det - 2.0 * b * b * id2) + 2.0 * gC * a * b * id2
        gc = gA * (1.0 / det - a * c * id2) + gB * a * b * id2 - gC * a * a * id2
        # G2 = [[ga, gb/2], [gb/2, gc]];  dSigma = T^T G2 T;  dT = 2 G2 T Sigma
        for j in range(3):
            G2T[0, j] = ga * T[0, j] + 0.5 * gb * T[1, j]
            G2T[1, j] = 0.5 * gb * T[0, j] + gc * T[1, j]
            dT[0, j] = 2.0 * (ga * TS[0, j] + 0.5 * gb * TS[1, j])
            dT[1, j] = 2.0 * (0.5 * gb * TS[0, j] + gc * TS[1, j])
        for r in range(3):
            for j in range(3):
                dSigma[r, j] = T[0, r] * G2T[0, j] + T[1, r] * G2T[1, j]
        # dJ = dT Rc^T; only the four non-zero entries of J matter
        dj00 = dT[0, 0] * Rc[0, 0] + dT[0, 1] * Rc[0, 1] + dT[0, 2] * Rc[0, 2]
        dj02 = dT[0, 0] * Rc[2, 0] + dT[0, 1] * Rc[2, 1] + dT[0, 2] * Rc[2, 2]
        dj11 = dT[1, 0] * Rc[1, 0] + dT[1, 1] * Rc[1, 1] + dT[1, 2] * Rc[1, 2]
        dj12 = dT[1, 0] * Rc[2, 0] + dT[1, 1] * Rc[2, 1] + dT[1, 2] * Rc[2, 2]
        iz = 1.0 / zc
        iz2 = iz * iz
        gu, gv = d_means[k, 0], d_means[k, 1]
        dx = gu * f * iz - dj02 * f * iz2
        dy = gv * f * iz - dj12 * f * iz2
        dz = (-(gu * xc + gv * yc) * f * iz2 - (dj00 + dj11) * f * iz2
              + 2.0 * f * (dj02 * xc + dj12 * yc) * iz2 * iz)
        for j in range(3):
            d_pos[i, j] = Rc[0, j] * dx + Rc[1, j] * dy + Rc[2, j] * dz
        for r in range(3):
            for j in range(3):
                dM[r, j] = 2.0 * (dSigma[r, 0] * M[0, j] + dSigma[r, 1] * M[1, j]
                                  + dSigma[r, 2] * M[2, j])
        for r in range(3):
            for j in range(3):
                d_scale[i, j] += dM[r, j] * Rq[r, j]
                gR[r, j] = dM[r, j] * scales[i, j]
        qn, w, x, y, z = _quat_rot(q, Rq)
        gw = 2 * (-gR[0, 1] * z + gR[0, 2] * y + gR[1, 0] * z - gR[1, 2] * x
                  - gR[2, 0] * y + gR[2, 1] * x)
        gx = 2 * (gR[0, 1] * y + gR[0, 2] * z + gR[1, 0] * y - 2 * gR[1, 1] * x
                  - gR[1, 2] * w + gR[2, 0] * z + gR[2, 1] * w - 2 * gR[2, 2] * x)
        gy = 2 * (-2 * gR[0, 0] * y + gR[0, 1] * x + gR[0, 2] * w + gR[1, 0] * x
                  + gR[1, 2] * z - gR[2, 0] * w + gR[2, 1] * z - 2 * gR[2, 2] * y)
        gz = 2 * (-2 * gR[0, 0] * z - gR[0, 1] * w + gR[0, 2] * x + gR[1, 0] * w
                  - 2 * gR[1, 1] * z + gR[1, 2] * y + gR[2, 0] * x + gR[2, 1] * y)
        dot = w * gw + x * gx + y * gy + z * gz
        d_rot[i, 0] = (gw - w * dot) / qn
        d_rot[i, 1] = (gx - x * dot) / qn
        d_rot[i, 2] = (gy - y * dot) / qn
        d_rot[i, 3] = (gz - z * dot) / qn
    return d_pos, d_scale, d_rot
