"""Cameras, the azimuth view ring, Plücker ray maps and extrinsic transfer.

Conventions
-----------
* World frame is y-up. Azimuth is measured counter-clockwise about +y, with
  azimuth 0 placing the camera on +z looking toward -z (the "front").
* Camera frame follows OpenCV: x right, y down, z forward.
* ``CameraPose.rotation`` maps world to camera, ``x_cam = R @ x_world + t``.
* Pixel ``(row i, col j)`` has its center at ``(u, v) = (j + 0.5, i + 0.5)``;
  the principal point sits at the image center and pixels are square.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_FOV_DEG = 50.0
DEFAULT_RADIUS = 2.7
DEFAULT_EXTRA_ELEVATION = 30.0

# Azimuth offsets for each supported ring size; the first entry is always the
# input-view slot. The 8-view ring adds front-top / front-bottom cameras.
_RING_OFFSETS = {
    4: [(0.0, 0.0), (-90.0, 0.0), (90.0, 0.0), (180.0, 0.0)],
    6: [(0.0, 0.0), (-45.0, 0.0), (45.0, 0.0), (-90.0, 0.0), (90.0, 0.0), (180.0, 0.0)],
    8: [(0.0, 0.0), (-45.0, 0.0), (45.0, 0.0), (-90.0, 0.0), (90.0, 0.0), (180.0, 0.0),
        (0.0, 1.0), (0.0, -1.0)],
}


class CameraError(ValueError):
    """Invalid camera configuration or degenerate camera geometry."""


@dataclass(frozen=True)
class Intrinsics:
    fov_deg: float = DEFAULT_FOV_DEG
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise CameraError(f"fov_deg must lie in (0, 180), got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise CameraError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def focal(self) -> float:
        """Focal length in pixels (vertical fov, square pixels)."""
        return 0.5 * self.height / np.tan(np.deg2rad(self.fov_deg) / 2.0)

    @property
    def principal_point(self) -> tuple[float, float]:
        return 0.5 * self.width, 0.5 * self.height

    def matrix(self) -> np.ndarray:
        f = self.focal
        cx, cy = self.principal_point
        return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    def resized(self, width: int, height: int) -> "Intrinsics":
        return Intrinsics(self.fov_deg, width, height)


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise CameraError("rotation must be a proper orthonormal matrix")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye: Sequence[float], target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> "CameraPose":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise CameraError("camera coincides with its look-at target")
        forward /= norm
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            raise CameraError("view direction is parallel to the up vector")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls(R, -R @ eye)

    @classmethod
    def orbit(cls, azimuth_deg: float, elevation_deg: float, radius: float) -> "CameraPose":
        """Camera on a sphere around the origin, looking at the origin."""
        return cls.look_at(orbit_position(azimuth_deg, elevation_deg, radius))

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "CameraPose":
        """Pose of the same camera after moving the world by ``x -> A x + b``."""
        A = np.asarray(rotation, dtype=np.float64)
        b = np.asarray(translation, dtype=np.float64)
        R = self.rotation @ A.T
        return CameraPose(R, self.translation - R @ b)


def orbit_position(azimuth_deg: float, elevation_deg: float, radius: float) -> np.ndarray:
    az, el = np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg)
    return radius * np.array([np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])


@dataclass(frozen=True)
class View:
    intrinsics: Intrinsics
    pose: CameraPose
    azimuth_deg: float
    elevation_deg: float


@dataclass(frozen=True)
class ViewRig:
    views: tuple[View, ...]
    radius: float = DEFAULT_RADIUS

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ViewRig(self.views[idx], self.radius)
        return self.views[idx]

    @property
    def azimuths(self) -> list[float]:
        return [v.azimuth_deg for v in self.views]

    @property
    def elevations(self) -> list[float]:
        return [v.elevation_deg for v in self.views]

    def select(self, indices: Iterable[int]) -> "ViewRig":
        return ViewRig(tuple(self.views[i] for i in indices), self.radius)

    @classmethod
    def from_angles(cls, angles: Iterable[tuple[float, float]], radius: float,
                    intr: Intrinsics) -> "ViewRig":
        views = tuple(View(intr, CameraPose.orbit(az, el, radius), float(az), float(el))
                      for az, el in angles)
        return cls(views, float(radius))

    def to_dict(self) -> dict:
        if not self.views:
            raise CameraError("cannot serialize an empty rig")
        intr = self.views[0].intrinsics
        return {
            "fov_deg": intr.fov_deg,
            "width": intr.width,
            "height": intr.height,
            "radius": self.radius,
            "frames": [
                {
                    "azimuth_deg": v.azimuth_deg,
                    "elevation_deg": v.elevation_deg,
                    "rotation": [float(x) for x in v.pose.rotation.reshape(-1)],
                    "translation": [float(x) for x in v.pose.translation],
                }
                for v in self.views
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ViewRig":
        intr = Intrinsics(float(doc["fov_deg"]), int(doc["width"]), int(doc["height"]))
        views = []
        for fr in doc["frames"]:
            pose = CameraPose(np.array(fr["rotation"], dtype=np.float64).reshape(3, 3),
                              np.array(fr["translation"], dtype=np.float64))
            views.append(View(intr, pose, float(fr["azimuth_deg"]), float(fr["elevation_deg"])))
        radius = doc.get("radius")
        if radius is None:
            radius = float(np.linalg.norm(views[0].pose.center)) if views else DEFAULT_RADIUS
        return cls(tuple(views), float(radius))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ViewRig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def ring_angles(input_azimuth: float, n_views: int,
                extra_elevation: float = DEFAULT_EXTRA_ELEVATION) -> list[tuple[float, float]]:
    if n_views not in _RING_OFFSETS:
        raise CameraError(f"n_views must be one of {sorted(_RING_OFFSETS)}, got {n_views}")
    return [(input_azimuth + daz, sign * extra_elevation)
            for daz, sign in _RING_OFFSETS[n_views]]


def make_view_ring(input_azimuth: float, n_views: int = 6, radius: float = DEFAULT_RADIUS,
                   intr: Intrinsics | None = None,
                   extra_elevation: float = DEFAULT_EXTRA_ELEVATION) -> ViewRig:
    """Build the generation ring around an input azimuth.

    The first camera reuses the input azimuth (input-view reconstruction slot).
    Azimuths are reported unwrapped, e.g. ``input_azimuth + 180``.
    """
    if radius <= 0:
        raise CameraError(f"radius must be positive, got {radius}")
    intr = intr or Intrinsics()
    return ViewRig.from_angles(ring_angles(input_azimuth, n_views, extra_elevation), radius, intr)


def pixel_rays(intr: Intrinsics, pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origin (3,) and unit directions (H, W, 3) through pixel centers."""
    f = intr.focal
    cx, cy = intr.principal_point
    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    dirs_cam = np.stack([(uu - cx) / f, (vv - cy) / f, np.ones_like(uu)], axis=-1)
    dirs = dirs_cam @ pose.rotation  # R^T applied row-wise
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return pose.center, dirs


def plucker_map(intr: Intrinsics, pose: CameraPose) -> np.ndarray:
    """Per-pixel Plücker coordinates, shape (H, W, 6): moment ``c x d`` then direction ``d``."""
    origin, dirs = pixel_rays(intr, pose)
    moment = np.cross(np.broadcast_to(origin, dirs.shape), dirs)
    return np.concatenate([moment, dirs], axis=-1)


def rig_pluckers(rig: ViewRig) -> np.ndarray:
    return np.stack([plucker_map(v.intrinsics, v.pose) for v in rig])


def recenter_shift(centers: Sequence[Sequence[float]]) -> np.ndarray:
    """Translation that moves the world origin to the mean camera location."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if len(centers) == 0:
        raise CameraError("recentering needs at least one camera center")
    return centers.mean(axis=0)


def recompute_extrinsic(dataset_input: CameraPose, dataset_test: CameraPose,
                        method_input: CameraPose, method_radius: float,
                        recenter: Sequence[Sequence[float]] | None = None) -> CameraPose:
    """Express a dataset test camera in another method's camera system.

    The rotation taking the dataset's input camera to its test camera (in the
    camera frame, which both systems share) is applied to the method's input
    camera; the translation is then rescaled to ``method_radius``.
    """
    if method_radius <= 0:
        raise CameraError("method_radius must be positive")
    if recenter is not None:
        shift = recenter_shift(recenter)
        dataset_input = dataset_input.transformed(np.eye(3), -shift)
        dataset_test = dataset_test.transformed(np.eye(3), -shift)
    for name, pose in (("dataset input", dataset_input), ("dataset test", dataset_test),
                       ("method input", method_input)):
        if np.linalg.norm(pose.center) < 1e-12:
            raise CameraError(f"{name} camera sits at the world origin (zero distance)")
    if np.array_equal(dataset_test.rotation, dataset_input.rotation):
        rotation = method_input.rotation  # exact: R R^T carries rounding residue
    else:
        rotation = dataset_test.rotation @ dataset_input.rotation.T @ method_input.rotation
    t = method_input.translation
    translation = t * (method_radius / np.linalg.norm(t))
    return CameraPose(rotation, translation)
