"""Gaussian primitives and clouds.

A :class:`SplatCloud` stores parameters as parallel arrays. The arrays may be
numpy arrays (data handling, export) or torch tensors (training); the helpers
here are written to accept either.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

FIELDS = ("positions", "scales", "rotations", "opacities", "colors")


class SplatError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianSplat:
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # (w, x, y, z)
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        for name in ("position", "scale", "rotation", "color"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-9:
            raise SplatError("rotation quaternion must have unit norm")
        if np.any(self.scale <= 0):
            raise SplatError("scales must be strictly positive")
        if not 0.0 <= self.opacity <= 1.0:
            raise SplatError("opacity must lie in [0, 1]")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise SplatError("color must lie in [0, 1]^3")


@dataclass
class SplatCloud:
    positions: np.ndarray | torch.Tensor   # (N, 3)
    scales: np.ndarray | torch.Tensor      # (N, 3) per-axis standard deviation
    rotations: np.ndarray | torch.Tensor   # (N, 4) unit quaternions (w, x, y, z)
    opacities: np.ndarray | torch.Tensor   # (N,)
    colors: np.ndarray | torch.Tensor      # (N, 3)

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @classmethod
    def empty(cls) -> "SplatCloud":
        return cls(np.zeros((0, 3)), np.ones((0, 3)), np.tile([1.0, 0, 0, 0], (0, 1)),
                   np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def from_splats(cls, splats: Sequence[GaussianSplat]) -> "SplatCloud":
        if not splats:
            return cls.empty()
        return cls(np.stack([s.position for s in splats]),
                   np.stack([s.scale for s in splats]),
                   np.stack([s.rotation for s in splats]),
                   np.array([s.opacity for s in splats], dtype=np.float64),
                   np.stack([s.color for s in splats]))

    def splat(self, i: int) -> GaussianSplat:
        c = self.numpy()
        return GaussianSplat(c.positions[i], c.scales[i], c.rotations[i],
                             float(c.opacities[i]), c.colors[i])

    @property
    def is_torch(self) -> bool:
        return isinstance(self.positions, torch.Tensor)

    def numpy(self, dtype=np.float64) -> "SplatCloud":
        def conv(x):
            if isinstance(x, torch.Tensor):
                x = x.detach().cpu().numpy()
            return np.asarray(x, dtype=dtype)
        return SplatCloud(*(conv(getattr(self, f)) for f in FIELDS))

    def torch(self, dtype=torch.float64, requires_grad: bool = False) -> "SplatCloud":
        def conv(x):
            if isinstance(x, torch.Tensor):
                t = x.to(dtype)
            else:
                t = torch.as_tensor(np.asarray(x), dtype=dtype)
            if requires_grad:
                t = t.detach().clone().requires_grad_(True)
            return t
        return SplatCloud(*(conv(getattr(self, f)) for f in FIELDS))

    def detach(self) -> "SplatCloud":
        if not self.is_torch:
            return self
        return SplatCloud(*(getattr(self, f).detach() for f in FIELDS))

    def parameters(self) -> list:
        return [getattr(self, f) for f in FIELDS]

    def take(self, index) -> "SplatCloud":
        return SplatCloud(*(getattr(self, f)[index] for f in FIELDS))

    def validate(self, atol: float = 1e-9) -> None:
        c = self.numpy()
        n = len(c)
        shapes = {"positions": (n, 3), "scales": (n, 3), "rotations": (n, 4),
                  "opacities": (n,), "colors": (n, 3)}
        for name, shape in shapes.items():
            if getattr(c, name).shape != shape:
                raise SplatError(f"{name} has shape {getattr(c, name).shape}, expected {shape}")
        if n == 0:
            return
        if np.any(np.abs(np.linalg.norm(c.rotations, axis=1) - 1.0) > atol):
            raise SplatError("rotation quaternions must have unit norm")
        if np.any(c.scales <= 0):
            raise SplatError("scales must be strictly positive")
        if np.any((c.opacities < 0) | (c.opacities > 1)):
            raise SplatError("opacities must lie in [0, 1]")
        if np.any((c.colors < 0) | (c.colors > 1)):
            raise SplatError("colors must lie in [0, 1]")


def concat(clouds: Sequence[SplatCloud]) -> SplatCloud:
    if not clouds:
        return SplatCloud.empty()
    if any(c.is_torch for c in clouds):
        clouds = [c if c.is_torch else c.torch() for c in clouds]
        return SplatCloud(*(torch.cat([getattr(c, f) for c in clouds]) for f in FIELDS))
    return SplatCloud(*(np.concatenate([getattr(c, f) for c in clouds]) for f in FIELDS))


def quat_to_rotmat(q):
    """Rotation matrices from (..., 4) quaternions (w, x, y, z); numpy or torch.

    The quaternion is normalised first, so the map is smooth for any non-zero input.
    """
    lib = torch if isinstance(q, torch.Tensor) else np
    if lib is torch:
        q = q / torch.linalg.norm(q, dim=-1, keepdim=True)
    else:
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    m = lib.stack(rows, -1) if lib is torch else np.stack(rows, axis=-1)
    return m.reshape(*q.shape[:-1], 3, 3)


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat` for a single matrix, with w >= 0."""
    from scipy.spatial.transform import Rotation

    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def covariances(scales, rotations):
    """Batched ``R(q) diag(s^2) R(q)^T`` for (N, 3) scales and (N, 4) quaternions."""
    R = quat_to_rotmat(rotations)
    if isinstance(R, torch.Tensor):
        M = R * scales[..., None, :]
        return M @ M.transpose(-1, -2)
    M = R * scales[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def covariance(splat: GaussianSplat) -> np.ndarray:
    """3x3 world-space covariance of a single splat."""
    return covariances(splat.scale[None], splat.rotation[None])[0]
