"""Procedural multi-view training data.

Scenes are built directly from Gaussian splats so ground-truth images come
from the same renderer the models are trained through:

* ``head`` scenes: an ellipsoidal skull with a skin/hair palette, eyes, brows,
  nose, mouth and ears on the front, so front and back renders differ.
* ``object`` scenes: one to three random primitives (sphere, box, cylinder)
  for reconstructor pretraining.

Lighting is applied to colors only. ``ambient`` keeps albedo; ``random_env``
approximates an environment map with one to three directional lights over an
ambient floor, shading each splat through its surface normal.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import (DEFAULT_FOV_DEG, DEFAULT_RADIUS, CameraPose, Intrinsics, ViewRig,
                     make_view_ring)
from .splat import SplatCloud, render, save_png
from .splat.cloud import rotmat_to_quat

CATEGORIES = ("head", "object")
LIGHTINGS = ("ambient", "random_env")
BACKGROUND = (1.0, 1.0, 1.0)
ELEVATION_RANGE = (-30.0, 45.0)
LANDMARK_NAMES = ("left_eye", "right_eye", "nose_tip", "mouth_left", "mouth_right")

# Disjoint identity seed ranges keep pretraining, fine-tuning and evaluation apart.
SEED_RANGES = {"pretrain": (1_000_000, 2_000_000), "train": (0, 500_000),
               "eval": (500_000, 1_000_000)}


@dataclass(frozen=True)
class SceneSpec:
    category: str
    seed: int
    appearance: int = 0
    lighting: str = "ambient"

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.lighting not in LIGHTINGS:
            raise ValueError(f"unknown lighting {self.lighting!r}")

    @property
    def scene_id(self) -> str:
        return f"{self.category}_{self.seed:07d}_a{self.appearance:02d}_{self.lighting}"


def split_seeds(split: str, count: int, start: int = 0) -> list[int]:
    lo, hi = SEED_RANGES[split]
    if lo + start + count > hi:
        raise ValueError(f"split {split!r} has room for {hi - lo} identities")
    return list(range(lo + start, lo + start + count))


def dataset_specs(category: str, scenes: int, appearances: int = 1, lighting: str = "ambient",
                  split: str | None = None, seed: int = 0) -> list[SceneSpec]:
    """``scenes`` specs: consecutive identities of a split, ``appearances`` each.

    Objects default to the pretraining split, heads to the training split.
    """
    if scenes < 1 or appearances < 1:
        raise ValueError("scenes and appearances must be positive")
    split = split or ("pretrain" if category == "object" else "train")
    n_ident = -(-scenes // appearances)
    ids = split_seeds(split, n_ident, start=seed * n_ident)
    return [SceneSpec(category, i, a, lighting) for i in ids for a in range(appearances)][:scenes]


def _frame_from_normals(normals: np.ndarray) -> np.ndarray:
    """Quaternions whose local z axis follows each normal."""
    quats = np.empty((len(normals), 4))
    for i, n in enumerate(normals):
        helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        t1 = np.cross(helper, n)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        quats[i] = rotmat_to_quat(np.stack([t1, t2, n], axis=1))
    return quats


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)], 1)


@dataclass
class _Parts:
    positions: list = field(default_factory=list)
    normals: list = field(default_factory=list)
    scales: list = field(default_factory=list)
    colors: list = field(default_factory=list)
    opacities: list = field(default_factory=list)

    def add(self, pos, nrm, scale, color, opacity=0.97):
        pos = np.atleast_2d(pos)
        n = len(pos)
        nrm = np.atleast_2d(nrm)
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        self.positions.append(pos)
        self.normals.append(np.broadcast_to(nrm, (n, 3)))
        self.scales.append(np.broadcast_to(np.asarray(scale, float), (n, 3)))
        self.colors.append(np.broadcast_to(np.asarray(color, float), (n, 3)))
        self.opacities.append(np.broadcast_to(np.asarray(opacity, float), (n,)))

    def build(self):
        return (np.concatenate(self.positions), np.concatenate(self.normals),
                np.concatenate(self.scales), np.concatenate(self.colors),
                np.concatenate(self.opacities))


def identity_params(seed: int) -> dict:
    rng = np.random.default_rng([seed, 0])
    skin_tones = np.array([[0.96, 0.80, 0.69], [0.87, 0.67, 0.53], [0.71, 0.51, 0.36],
                           [0.55, 0.37, 0.25], [0.38, 0.25, 0.17]])
    hair_colors = np.array([[0.10, 0.07, 0.05], [0.35, 0.20, 0.10], [0.85, 0.70, 0.35],
                            [0.60, 0.15, 0.08], [0.75, 0.75, 0.78], [0.15, 0.20, 0.45]])
    skin = np.clip(skin_tones[rng.integers(len(skin_tones))] * rng.uniform(0.92, 1.05, 3), 0, 1)
    # hair must contrast with skin so the back of the head reads differently
    order = rng.permutation(len(hair_colors))
    hair = max(hair_colors[order], key=lambda h: min(np.linalg.norm(h - skin), 0.45))
    return {
        "axes": [rng.uniform(0.58, 0.68), rng.uniform(0.78, 0.88), rng.uniform(0.68, 0.76)],
        "skin": skin.tolist(),
        "hair": hair.tolist(),
        "iris": np.clip(rng.uniform(0.05, 0.5, 3), 0, 1).tolist(),
        "lips": [rng.uniform(0.6, 0.85), rng.uniform(0.2, 0.35), rng.uniform(0.25, 0.35)],
        "eye_spacing": rng.uniform(0.2, 0.26),
        "eye_height": rng.uniform(0.08, 0.16),
        "nose_length": rng.uniform(0.07, 0.13),
        "mouth_height": rng.uniform(-0.34, -0.26),
    }


def appearance_params(seed: int, appearance: int) -> dict:
    rng = np.random.default_rng([seed, 1, appearance])
    return {
        "smile": rng.uniform(-0.03, 0.05),      # expression: mouth width / corner lift
        "brow_raise": rng.uniform(-0.02, 0.05),
        "hairline": rng.uniform(0.25, 0.55),    # y of the front hairline, as a fraction of the y axis
        "hair_back": rng.uniform(-0.75, -0.35), # hair reaches down to this fraction at the back
        "hair_blobs": rng.integers(0, 6),
        "blob_seed": int(rng.integers(1 << 30)),
    }


def _ellipsoid_normal(p, axes):
    n = p / np.asarray(axes) ** 2
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _surface_point(direction, axes):
    """Point on the ellipsoid along ``direction`` from its center."""
    d = np.asarray(direction, float)
    k = 1.0 / np.sqrt(np.sum((d / np.asarray(axes)) ** 2, axis=-1, keepdims=True))
    return d * k


def head_landmarks_3d(seed: int, appearance: int = 0) -> np.ndarray:
    ident = identity_params(seed)
    app = appearance_params(seed, appearance)
    axes = ident["axes"]
    ex, ey = ident["eye_spacing"], ident["eye_height"]
    mw = 0.13 + app["smile"]
    pts = []
    for d in ([-ex, ey, 1.0], [ex, ey, 1.0]):
        pts.append(_surface_point(d, axes))
    nose = _surface_point([0.0, -0.05, 1.0], axes) + [0, 0, ident["nose_length"]]
    pts.append(nose)
    for x in (-mw, mw):
        pts.append(_surface_point([x, ident["mouth_height"] + app["smile"] * 0.5, 1.0], axes))
    return np.stack(pts)


def _head(spec: SceneSpec, parts: _Parts) -> None:
    ident = identity_params(spec.seed)
    app = appearance_params(spec.seed, spec.appearance)
    axes = np.asarray(ident["axes"])
    skin, hair = np.asarray(ident["skin"]), np.asarray(ident["hair"])
    rng = np.random.default_rng([spec.seed, 2, spec.appearance])

    dirs = _fibonacci_sphere(900)
    pts = dirs * axes
    nrm = _ellipsoid_normal(pts, axes)
    y_rel = dirs[:, 1]
    is_hair = (y_rel > app["hairline"]) | ((dirs[:, 2] < -0.1) & (y_rel > app["hair_back"]))
    is_hair |= (dirs[:, 2] < 0.25) & (y_rel > app["hairline"] - 0.25) & (np.abs(dirs[:, 0]) < 0.9)
    if app["hair_blobs"]:
        brng = np.random.default_rng(app["blob_seed"])
        centers = _fibonacci_sphere(64)[brng.choice(64, app["hair_blobs"], replace=False)]
        for c in centers:
            is_hair |= (dirs @ c > 0.93) & (y_rel > -0.4)
    jitter = rng.uniform(0.93, 1.07, (len(pts), 1))
    colors = np.where(is_hair[:, None], hair * jitter, skin * jitter)
    parts.add(pts, nrm, (0.075, 0.075, 0.02), np.clip(colors, 0, 1))

    # neck
    for ang in np.linspace(0, 2 * np.pi, 24, endpoint=False):
        for y in np.linspace(-1.2, -0.85, 4):
            d = np.array([np.sin(ang), 0.0, np.cos(ang)])
            parts.add(d * 0.3 + [0, y * axes[1], 0], d, (0.07, 0.07, 0.02), skin * 0.9)

    ex, ey = ident["eye_spacing"], ident["eye_height"] + 0 * app["brow_raise"]
    out = np.array([0.0, 0.0, 0.012])
    for sx in (-1, 1):
        c = _surface_point([sx * ex, ey, 1.0], axes)
        n = _ellipsoid_normal(c, axes)
        parts.add(c + n * 0.01, n, (0.06, 0.035, 0.01), (0.97, 0.97, 0.97))
        parts.add(c + n * 0.02, n, (0.028, 0.028, 0.01), ident["iris"])
        brow = _surface_point([sx * ex, ey + 0.12 + app["brow_raise"], 1.0], axes)
        for dx in (-0.04, 0.0, 0.04):
            b = brow + [dx, 0, 0]
            parts.add(b + out, n, (0.03, 0.012, 0.008), hair * 0.8)
        ear = _surface_point([sx, 0.0, 0.05], axes)
        en = _ellipsoid_normal(ear, axes)
        for dy in (-0.07, 0.0, 0.07):
            parts.add(ear + en * 0.03 + [0, dy, 0], en, (0.04, 0.05, 0.02), skin * 0.85)

    nose_base = _surface_point([0.0, -0.05, 1.0], axes)
    for k, t in enumerate(np.linspace(0.0, 1.0, 5)):
        p = nose_base + [0, 0.1 * (1 - t), ident["nose_length"] * t]
        parts.add(p, [0, -0.2, 1.0], (0.035, 0.045, 0.03), skin * (0.92 - 0.04 * k))
    mw = 0.13 + app["smile"]
    my = ident["mouth_height"]
    for x in np.linspace(-mw, mw, 7):
        lift = app["smile"] * (x / mw) ** 2
        p = _surface_point([x, my + lift, 1.0], axes)
        n = _ellipsoid_normal(p, axes)
        parts.add(p + n * 0.01, n, (0.035, 0.018, 0.01), ident["lips"])


def _object(spec: SceneSpec, parts: _Parts) -> None:
    rng = np.random.default_rng([spec.seed, 3, spec.appearance])
    for _ in range(rng.integers(1, 4)):
        kind = rng.choice(["sphere", "box", "cylinder"])
        center = rng.uniform(-0.35, 0.35, 3)
        size = rng.uniform(0.2, 0.45, 3)
        base = rng.uniform(0.05, 0.95, 3)
        stripe = rng.uniform(0.05, 0.95, 3)
        freq = rng.uniform(4, 12)
        n_pts = int(rng.integers(200, 450))
        if kind == "sphere":
            d = _fibonacci_sphere(n_pts)
            p = d * size
            nrm = _ellipsoid_normal(p, size)
        elif kind == "box":
            face = rng.integers(0, 6, n_pts)
            uv = rng.uniform(-1, 1, (n_pts, 2))
            axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
            p = np.zeros((n_pts, 3))
            nrm = np.zeros((n_pts, 3))
            for i in range(n_pts):
                others = [a for a in range(3) if a != axis[i]]
                p[i, axis[i]] = sign[i]
                p[i, others] = uv[i]
                nrm[i, axis[i]] = sign[i]
            p *= size
        else:
            ang = rng.uniform(0, 2 * np.pi, n_pts)
            h = rng.uniform(-1, 1, n_pts)
            p = np.stack([np.cos(ang) * size[0], h * size[1], np.sin(ang) * size[0]], 1)
            nrm = np.stack([np.cos(ang), np.zeros(n_pts), np.sin(ang)], 1)
        band = (np.sin(freq * p[:, 1] + rng.uniform(0, 6)) > 0)[:, None]
        color = np.where(band, base, stripe)
        parts.add(p + center, nrm, (0.07, 0.07, 0.02), color)


def _shade(normals: np.ndarray, spec: SceneSpec) -> np.ndarray:
    if spec.lighting == "ambient":
        return np.ones(len(normals))
    rng = np.random.default_rng([spec.seed, 4, spec.appearance])
    shade = np.full(len(normals), rng.uniform(0.3, 0.5))
    for _ in range(rng.integers(1, 4)):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        shade += rng.uniform(0.3, 0.8) * np.maximum(normals @ d, 0.0)
    return shade


def scene_albedo(spec: SceneSpec) -> tuple[SplatCloud, np.ndarray]:
    """Unlit cloud plus per-splat normals."""
    parts = _Parts()
    (_head if spec.category == "head" else _object)(spec, parts)
    pos, nrm, scales, colors, opac = parts.build()
    cloud = SplatCloud(pos.copy(), scales.copy(), _frame_from_normals(nrm), opac.copy(),
                       np.clip(colors, 0.0, 1.0))
    return cloud, nrm.copy()


def generate_scene(spec: SceneSpec) -> SplatCloud:
    """Deterministic splat cloud for a scene spec (lighting baked into colors)."""
    cloud, normals = scene_albedo(spec)
    cloud.colors = np.clip(cloud.colors * _shade(normals, spec)[:, None], 0.0, 1.0)
    return cloud


def cloud_digest(cloud: SplatCloud) -> str:
    c = cloud.numpy()
    h = hashlib.sha256()
    for arr in (c.positions, c.scales, c.rotations, c.opacities, c.colors):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def random_view_angles(spec: SceneSpec, count: int,
                       elevation_range: Sequence[float] = ELEVATION_RANGE) -> list[tuple[float, float]]:
    rng = np.random.default_rng([spec.seed, 5, spec.appearance])
    az = rng.uniform(0.0, 360.0, count)
    el = rng.uniform(elevation_range[0], elevation_range[1], count)
    return list(zip(az.tolist(), el.tolist()))


def project_points(points: np.ndarray, intr: Intrinsics, pose: CameraPose) -> np.ndarray:
    pc = points @ pose.rotation.T + pose.translation
    f = intr.focal
    cx, cy = intr.principal_point
    return np.stack([f * pc[:, 0] / pc[:, 2] + cx, f * pc[:, 1] / pc[:, 2] + cy], 1)


# ---------------------------------------------------------------------------
# dataset manifest

@dataclass
class ManifestEntry:
    scene_id: str
    category: str
    seed: int
    appearance: int
    lighting: str
    ring_views: int
    random_views: int
    images: list[str]
    rig: str
    landmarks: list[list[float]] | None = None  # front ring view, pixels

    @property
    def spec(self) -> SceneSpec:
        return SceneSpec(self.category, self.seed, self.appearance, self.lighting)

    @property
    def ring_images(self) -> list[str]:
        return self.images[:self.ring_views]

    @property
    def random_images(self) -> list[str]:
        return self.images[self.ring_views:]


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    config: dict = field(default_factory=dict)
    root: Path | None = None

    def to_dict(self) -> dict:
        return {"config": self.config, "entries": [asdict(e) for e in self.entries]}

    @classmethod
    def from_dict(cls, doc: dict, root=None) -> "DatasetManifest":
        entries = [ManifestEntry(**e) for e in doc["entries"]]
        return cls(entries, doc.get("config", {}), Path(root) if root else None)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    def path(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def validate(self) -> None:
        for e in self.entries:
            if len(e.images) != e.ring_views + e.random_views:
                raise ValueError(f"{e.scene_id}: view count mismatch")
            for rel in [*e.images, e.rig]:
                if not self.path(rel).exists():
                    raise FileNotFoundError(self.path(rel))

    def load_views(self, entry: ManifestEntry) -> tuple[np.ndarray, ViewRig]:
        from .splat import load_png

        images = np.stack([load_png(self.path(p)) for p in entry.images])
        return images, ViewRig.load(self.path(entry.rig))


def render_dataset(specs: Sequence[SceneSpec], ring_views: int, random_views: int, out_dir,
                   resolution: int = 64, fov_deg: float = DEFAULT_FOV_DEG,
                   radius: float = DEFAULT_RADIUS,
                   elevation_range: Sequence[float] = ELEVATION_RANGE) -> DatasetManifest:
    """Render a ring plus random views per scene as PNGs, one rig JSON per scene."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    intr = Intrinsics(fov_deg, resolution, resolution)
    entries = []
    for spec in specs:
        cloud = generate_scene(spec)
        angles = []
        if ring_views:
            angles += list(zip(make_view_ring(0.0, ring_views, radius, intr).azimuths,
                               make_view_ring(0.0, ring_views, radius, intr).elevations))
        angles += random_view_angles(spec, random_views, elevation_range)
        rig = ViewRig.from_angles(angles, radius, intr)
        scene_dir = out_dir / spec.scene_id
        scene_dir.mkdir(exist_ok=True)
        names = []
        for k, view in enumerate(rig):
            kind = "ring" if k < ring_views else "random"
            idx = k if k < ring_views else k - ring_views
            rel = f"{spec.scene_id}/{kind}_{idx:02d}.png"
            save_png(out_dir / rel, render(cloud, view.intrinsics, view.pose, BACKGROUND).rgb)
            names.append(rel)
        rig_rel = f"{spec.scene_id}/rig.json"
        rig.save(out_dir / rig_rel)
        landmarks = None
        if spec.category == "head":
            front = CameraPose.orbit(0.0, 0.0, radius)
            landmarks = project_points(head_landmarks_3d(spec.seed, spec.appearance),
                                       intr, front).tolist()
        entries.append(ManifestEntry(spec.scene_id, spec.category, spec.seed, spec.appearance,
                                     spec.lighting, ring_views, random_views, names, rig_rel,
                                     landmarks))
    config = {"resolution": resolution, "fov_deg": fov_deg, "radius": radius,
              "ring_views": ring_views, "random_views": random_views,
              "elevation_range": list(elevation_range), "background": list(BACKGROUND)}
    manifest = DatasetManifest(entries, config, out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
