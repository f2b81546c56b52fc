"""Image metrics, landmark alignment and the novel-view benchmark harness.

Benchmark manifest (JSON)::

    {"subjects": [{"id": "s01", "input_view": "0", "test_views": ["1", "2"],
                   "gt_dir": "gt/s01", "landmarks_dir": "lm/s01",
                   "rig": "gt/s01/rig.json", "recenter": false}]}

``rig`` and ``recenter`` are optional; view names then index the rig frames.
Relative paths resolve against the manifest's directory. For every test view
the harness reads ``gt_dir/<view>.png`` and ``landmarks_dir/<view>.json`` and
the method's ``<method_dir>/<id>/<view>.png`` and ``<view>.json``. Landmark
files hold a JSON list of ``[x, y]`` pixel coordinates.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage, signal

from .camera import DEFAULT_RADIUS, CameraPose, ViewRig, recompute_extrinsic
from .splat import load_png

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class LandmarkError(ValueError):
    pass


def psnr(a, b, max_val: float = 1.0) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(max_val ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(a: np.ndarray, b: np.ndarray, win: np.ndarray, max_val: float) -> float:
    f = lambda x: signal.correlate2d(x, win, mode="valid")  # noqa: E731
    mu_a, mu_b = f(a), f(b)
    var_a = f(a * a) - mu_a ** 2
    var_b = f(b * b) - mu_b ** 2
    cov = f(a * b) - mu_a * mu_b
    c1, c2 = (SSIM_K1 * max_val) ** 2, (SSIM_K2 * max_val) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, max_val: float = 1.0) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    if np.array_equal(a, b):
        return 1.0
    win = gaussian_window()
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], win, max_val)
                          for c in range(a.shape[2])]))


# ---------------------------------------------------------------------------
# landmark alignment

def as_landmarks(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise LandmarkError(f"landmarks must be a (K >= 2, 2) array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise LandmarkError("landmarks must be finite")
    return pts


def fit_scale_translation(L1, L2) -> tuple[float, np.ndarray]:
    """Least-squares isotropic scale and translation taking ``L1`` onto ``L2``."""
    L1, L2 = as_landmarks(L1), as_landmarks(L2)
    if L1.shape != L2.shape:
        raise LandmarkError("landmark sets must have equal size")
    c1, c2 = L1.mean(axis=0), L2.mean(axis=0)
    d1, d2 = L1 - c1, L2 - c2
    den = float(np.sum(d1 * d1))
    if den == 0.0:
        raise LandmarkError("degenerate landmarks: all source points coincide")
    s = float(np.sum(d1 * d2)) / den
    return s, c2 - s * c1


def warp_scale_translation(image, s: float, t, background=(1.0, 1.0, 1.0),
                           out_shape=None) -> np.ndarray:
    """Resample ``image`` so a point at pixel position ``x`` moves to ``s x + t`` (bilinear)."""
    img = np.asarray(image, np.float64)
    h, w = out_shape or img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    src_x = (xs - t[0]) / s - 0.5
    src_y = (ys - t[1]) / s - 0.5
    chans = img[..., None] if img.ndim == 2 else img
    bg = np.broadcast_to(np.asarray(background, np.float64), (chans.shape[2],))
    out = np.stack([ndimage.map_coordinates(chans[..., c], [src_y, src_x], order=1,
                                            mode="constant", cval=bg[c])
                    for c in range(chans.shape[2])], axis=-1)
    return out[..., 0] if img.ndim == 2 else out


def landmark_align(image, L1, L2, background=(1.0, 1.0, 1.0)):
    """Align ``image`` (with landmarks ``L1``) to landmarks ``L2``; returns (image, s, t)."""
    s, t = fit_scale_translation(L1, L2)
    return warp_scale_translation(image, s, t, background), s, t


def load_landmarks(path) -> np.ndarray:
    try:
        return as_landmarks(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise LandmarkError(f"{path}: invalid JSON ({exc})") from None


def save_landmarks(path, points) -> None:
    Path(path).write_text(json.dumps(np.asarray(points, np.float64).tolist()))


# ---------------------------------------------------------------------------
# benchmark

@dataclass
class ScoreRow:
    subject: str
    view: str
    psnr: float
    ssim: float
    scale: float
    translation: list[float]
    method_pose: dict | None = None
    # pretrained-network metrics are out of scope; columns kept for external tools
    lpips: float | None = None
    dreamsim: float | None = None
    arcface: float | None = None


@dataclass
class ScoreReport:
    rows: list[ScoreRow]
    subject_means: dict[str, dict[str, float]]
    macro: dict[str, float]
    micro: dict[str, float]
    missing: list[str] = field(default_factory=list)
    skipped_subjects: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.skipped_subjects)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "subject_means": self.subject_means,
                "macro": self.macro, "micro": self.micro, "missing": self.missing,
                "skipped_subjects": self.skipped_subjects, "partial": self.partial,
                "metadata": self.metadata}

    def save(self, json_path, csv_path) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=1))
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject", "view", "psnr", "ssim", "lpips", "dreamsim", "arcface"])
            for r in self.rows:
                writer.writerow([r.subject, r.view, r.psnr, r.ssim, r.lpips, r.dreamsim,
                                 r.arcface])


def aggregate(rows: list[ScoreRow]) -> tuple[dict, dict, dict]:
    """Per-subject means, macro average (mean of subject means) and micro average (all rows)."""
    subjects: dict[str, list[ScoreRow]] = {}
    for r in rows:
        subjects.setdefault(r.subject, []).append(r)
    means = {sid: {"psnr": float(np.mean([r.psnr for r in rs])),
                   "ssim": float(np.mean([r.ssim for r in rs])), "views": len(rs)}
             for sid, rs in subjects.items()}
    if not rows:
        nan = {"psnr": math.nan, "ssim": math.nan}
        return means, dict(nan), dict(nan)
    macro = {k: float(np.mean([m[k] for m in means.values()])) for k in ("psnr", "ssim")}
    micro = {k: float(np.mean([getattr(r, k) for r in rows])) for k in ("psnr", "ssim")}
    return means, macro, micro


def _method_pose(rig: ViewRig, input_view: str, test_view: str, radius: float,
                 recenter: bool) -> dict:
    ds_in, ds_test = rig[int(input_view)].pose, rig[int(test_view)].pose
    centers = [v.pose.center for v in rig] if recenter else None
    pose = recompute_extrinsic(ds_in, ds_test, CameraPose.orbit(0.0, 0.0, radius), radius,
                               centers)
    return {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()}


def run_benchmark(manifest_path, method_dir, input_view_selector: Callable | None = None,
                  method_radius: float = DEFAULT_RADIUS, background=(1.0, 1.0, 1.0)) -> ScoreReport:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    doc = json.loads(manifest_path.read_text())
    method_dir = Path(method_dir)
    rows, missing, skipped = [], [], []
    for subject in doc["subjects"]:
        sid = str(subject["id"])
        input_view = str(input_view_selector(subject) if input_view_selector
                         else subject["input_view"])
        gt_dir = root / subject["gt_dir"]
        lm_dir = root / subject["landmarks_dir"]
        views = [str(v) for v in subject["test_views"]]
        needed = []
        for v in views:
            needed += [gt_dir / f"{v}.png", lm_dir / f"{v}.json",
                       method_dir / sid / f"{v}.png", method_dir / sid / f"{v}.json"]
        rig = None
        if subject.get("rig"):
            needed.append(root / subject["rig"])
        absent = [str(p) for p in needed if not p.exists()]
        if absent:
            missing += absent
            skipped.append(sid)
            warnings.warn(f"subject {sid}: {len(absent)} missing file(s), skipped")
            continue
        if subject.get("rig"):
            rig = ViewRig.load(root / subject["rig"])
        for v in views:
            gt = load_png(gt_dir / f"{v}.png")
            render = load_png(method_dir / sid / f"{v}.png")
            aligned, s, t = landmark_align(render, load_landmarks(method_dir / sid / f"{v}.json"),
                                           load_landmarks(lm_dir / f"{v}.json"), background)
            pose = (_method_pose(rig, input_view, v, method_radius, bool(subject.get("recenter")))
                    if rig is not None else None)
            rows.append(ScoreRow(sid, v, psnr(aligned, gt), ssim(aligned, gt), s,
                                 [float(x) for x in t], pose))
    means, macro, micro = aggregate(rows)
    meta = {"averaging": "macro = mean of per-subject means (primary); micro = mean over rows",
            "manifest": str(manifest_path), "method_dir": str(method_dir)}
    return ScoreReport(rows, means, macro, micro, missing, skipped, meta)
