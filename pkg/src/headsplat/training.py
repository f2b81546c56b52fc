"""Training loops, checkpoints and end-to-end inference.

Randomness in every step comes from ``(seed, step)`` alone, so a run resumed
from a checkpoint replays exactly the steps an uninterrupted run would take.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .camera import Intrinsics, ViewRig, make_view_ring, ring_angles
from .config import ConfigError, RunConfig
from .diffusion import (DiffusionSchedule, ddim_sample, ddpm_loss, make_schedule,
                        ring_view_ids)
from .eval import landmark_align, psnr, warp_scale_translation
from .splat import SplatCloud, export_ply, render_torch, save_png
from .synthdata import BACKGROUND, DatasetManifest, ManifestEntry, generate_scene
from .transformer import (CheckpointError, NoisePredictor, Reconstructor, load_tensors,
                          rig_inputs, save_tensors)

EMA_DECAY = 0.95
NO_RECON_ELEVATION = 20.0  # slot-1 target elevation when input-view reconstruction is off


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses

def gradient_pyramid_loss(pred: torch.Tensor, target: torch.Tensor, levels: int = 3) -> torch.Tensor:
    """Mean L1 between image gradients over a 2x average-pooling pyramid.

    Images are ``(V, H, W, 3)``; stands in for a learned perceptual loss.
    """
    a = pred.permute(0, 3, 1, 2)
    b = target.permute(0, 3, 1, 2)
    total = pred.new_zeros(())
    for level in range(levels):
        if level:
            if min(a.shape[-2:]) < 2:
                break
            a, b = F.avg_pool2d(a, 2), F.avg_pool2d(b, 2)
        for dim in (-1, -2):
            total = total + (a.diff(dim=dim) - b.diff(dim=dim)).abs().mean()
    return total / levels


@dataclass
class LossParts:
    total: torch.Tensor
    mse: torch.Tensor
    perc: torch.Tensor


def reconstruction_loss(pred, target, mse_w: float, perc_w: float) -> LossParts:
    mse = F.mse_loss(pred, target)
    perc = gradient_pyramid_loss(pred, target)
    return LossParts(mse_w * mse + perc_w * perc, mse, perc)


def lr_at(step: int, base_lr: float, total: int, warmup: int) -> float:
    """Linear warmup then cosine decay to zero."""
    if warmup and step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(total - warmup, 1)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(step - warmup, span) / span))


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def step_generator(seed: int, step: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(step_rng(seed, step).integers(1 << 62)))


# ---------------------------------------------------------------------------
# checkpoints

def params_hash(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().to(torch.float32).numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, model: torch.nn.Module, kind: str, cfg: RunConfig, step: int,
                    optimizer: torch.optim.Optimizer | None = None, extra: dict | None = None) -> None:
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        for i, state in optimizer.state_dict()["state"].items():
            for key in ("exp_avg", "exp_avg_sq"):
                tensors[f"optim/{i}/{key}"] = state[key]
    meta = {"kind": kind, "step": step, "stage": cfg.train.stage, "config": cfg.to_dict(),
            "config_hash": cfg.digest(), "fov_deg": cfg.data.fov_deg,
            "resolution": cfg.data.resolution, "params_hash": params_hash(model),
            "model_config": asdict(model.cfg), **(extra or {})}
    save_tensors(path, tensors, meta)


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    meta: dict

    @classmethod
    def load(cls, path) -> "Checkpoint":
        if not Path(path).exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        return cls(*load_tensors(path))

    def model_state(self) -> dict[str, torch.Tensor]:
        return {k[len("model/"):]: v for k, v in self.tensors.items() if k.startswith("model/")}

    def load_model(self, model: torch.nn.Module, verify: bool = True) -> None:
        state = self.model_state()
        own = model.state_dict()
        bad = [k for k in own if k not in state or tuple(state[k].shape) != tuple(own[k].shape)]
        if bad or set(state) - set(own):
            raise CheckpointError(f"checkpoint does not match the model (e.g. {bad[:3]})")
        model.load_state_dict(state)
        if verify and self.meta.get("params_hash") and params_hash(model) != self.meta["params_hash"]:
            raise CheckpointError("parameter hash mismatch after load")

    def load_optimizer(self, optimizer: torch.optim.Optimizer) -> None:
        state = optimizer.state_dict()
        step = float(self.meta["step"])
        for i, _ in enumerate(state["param_groups"][0]["params"]):
            if f"optim/{i}/exp_avg" not in self.tensors:
                continue
            state["state"][i] = {"step": torch.tensor(step),
                                 "exp_avg": self.tensors[f"optim/{i}/exp_avg"].clone(),
                                 "exp_avg_sq": self.tensors[f"optim/{i}/exp_avg_sq"].clone()}
        optimizer.load_state_dict(state)


def check_fov(meta: dict, cfg: RunConfig) -> None:
    if abs(float(meta.get("fov_deg", cfg.data.fov_deg)) - cfg.data.fov_deg) > 1e-9:
        raise CheckpointError(f"checkpoint fov {meta['fov_deg']} differs from configured "
                              f"fov {cfg.data.fov_deg}")


def build_reconstructor(cfg: RunConfig, meta: dict | None = None) -> Reconstructor:
    from .transformer import ReconstructorConfig
    mc = ReconstructorConfig(**meta["model_config"]) if meta else cfg.reconstructor_config()
    return Reconstructor(mc)


def build_noise_predictor(cfg: RunConfig, meta: dict | None = None) -> NoisePredictor:
    from .transformer import NoisePredictorConfig
    mc = NoisePredictorConfig(**meta["model_config"]) if meta else cfg.noise_predictor_config()
    return NoisePredictor(mc)


# ---------------------------------------------------------------------------
# data

def downsample(images: torch.Tensor, size: int) -> torch.Tensor:
    """Area-average ``(..., H, W, 3)`` down to ``size x size``."""
    h = images.shape[-3]
    if h == size:
        return images
    f = h // size
    if f * size != h:
        raise ValueError(f"cannot area-downsample {h} to {size}")
    x = images.reshape(*images.shape[:-3], size, f, size, f, images.shape[-1])
    return x.mean(dim=(-4, -2))


def upsample(images: torch.Tensor, size: int) -> torch.Tensor:
    if images.shape[-3] == size:
        return images
    lead = images.shape[:-3]
    x = images.reshape(-1, *images.shape[-3:]).permute(0, 3, 1, 2)
    x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    return x.permute(0, 2, 3, 1).reshape(*lead, size, size, images.shape[-1])


class SceneStore:
    """Manifest entries with their images and rigs loaded once."""

    def __init__(self, manifest: DatasetManifest, category: str | None = None,
                 lighting: str = "any"):
        self.manifest = manifest
        self.entries = [e for e in manifest.entries
                        if (category is None or e.category == category)
                        and (lighting == "any" or e.lighting == lighting)]
        if not self.entries:
            raise TrainingError(f"manifest has no {category or ''} scenes "
                                f"(lighting={lighting})")
        self._cache: dict[str, tuple[torch.Tensor, ViewRig]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def views(self, entry: ManifestEntry) -> tuple[torch.Tensor, ViewRig]:
        if entry.scene_id not in self._cache:
            images, rig = self.manifest.load_views(entry)
            self._cache[entry.scene_id] = (torch.as_tensor(images, dtype=torch.float32), rig)
        return self._cache[entry.scene_id]

    def ring(self, entry: ManifestEntry, n_views: int) -> tuple[torch.Tensor, ViewRig]:
        """The ``n_views`` ring (input azimuth 0) picked out of the entry's ring views."""
        images, rig = self.views(entry)
        index = []
        for az, el in ring_angles(0.0, n_views):
            hits = [k for k in range(entry.ring_views)
                    if abs(rig[k].azimuth_deg - az) < 1e-6 and abs(rig[k].elevation_deg - el) < 1e-6]
            if not hits:
                raise TrainingError(f"{entry.scene_id}: no ring view at azimuth {az}, "
                                    f"elevation {el}")
            index.append(hits[0])
        return images[index], rig.select(index)

    def random_split(self, entry: ManifestEntry) -> tuple[torch.Tensor, ViewRig]:
        images, rig = self.views(entry)
        idx = list(range(entry.ring_views, entry.ring_views + entry.random_views))
        return images[idx], rig.select(idx)


def sample_reconstructor_views(store: SceneStore, entry: ManifestEntry, cfg: RunConfig,
                               rng: np.random.Generator):
    """(input images, input rig, supervision images, supervision rig) for one scene."""
    t = cfg.train
    rnd_imgs, rnd_rig = store.random_split(entry)
    if t.input_split == "ring":
        in_imgs, in_rig = store.ring(entry, t.n_input if t.n_input in (4, 6, 8) else 6)
        if t.n_novel > len(rnd_rig):
            raise ConfigError(f"{entry.scene_id}: needs {t.n_novel} random views")
        nov = rng.choice(len(rnd_rig), t.n_novel, replace=False)
        sup_imgs = torch.cat([in_imgs, rnd_imgs[nov]])
        sup_rig = ViewRig(in_rig.views + rnd_rig.select(nov).views, in_rig.radius)
        return in_imgs, in_rig, sup_imgs, sup_rig
    need = t.n_input + t.n_novel
    if need > len(rnd_rig):
        raise ConfigError(f"{entry.scene_id}: needs {need} random views, "
                            f"manifest has {len(rnd_rig)}")
    pick = rng.choice(len(rnd_rig), need, replace=False)
    sup_rig = rnd_rig.select(pick)
    sup_imgs = rnd_imgs[pick]
    return sup_imgs[: t.n_input], sup_rig.select(range(t.n_input)), sup_imgs, sup_rig


def render_rig(cloud: SplatCloud, rig: ViewRig, background=BACKGROUND) -> torch.Tensor:
    return torch.stack([render_torch(cloud, v.intrinsics, v.pose, background)[0] for v in rig])


def reconstruct(model: Reconstructor, images: torch.Tensor, rig: ViewRig) -> SplatCloud:
    pl, o, d = rig_inputs(rig)
    return model(images[None], pl[None], o[None], d[None])[0]


# ---------------------------------------------------------------------------
# training loops

@dataclass
class TrainResult:
    model: torch.nn.Module
    checkpoint: Path | None
    metrics: list[dict] = field(default_factory=list)


def _open_metrics(path: Path, columns: Sequence[str], append: bool):
    fh = open(path, "a" if append else "w", newline="")
    writer = csv.DictWriter(fh, fieldnames=list(columns))
    if not append:
        writer.writeheader()
    return fh, writer


def _make_optimizer(model, lr):
    return torch.optim.Adam(model.parameters(), lr=lr)


def _resume(path, model, optimizer, kind: str, cfg: RunConfig) -> int:
    ckpt = Checkpoint.load(path)
    if ckpt.meta.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {ckpt.meta.get('kind')} model, not {kind}")
    check_fov(ckpt.meta, cfg)
    ckpt.load_model(model)
    ckpt.load_optimizer(optimizer)
    return int(ckpt.meta["step"])


def _init_weights(path, model, kind: str, cfg: RunConfig) -> str:
    ckpt = Checkpoint.load(path)
    if ckpt.meta.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {ckpt.meta.get('kind')} model, not {kind}")
    check_fov(ckpt.meta, cfg)
    ckpt.load_model(model, verify=True)  # two-stage contract: weights verbatim
    return ckpt.meta["params_hash"]


def train_reconstructor(cfg: RunConfig, out_dir=None, manifest: DatasetManifest | None = None,
                        resume=None, store: SceneStore | None = None,
                        callback: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Pretrain (objects) or fine-tune (heads) the reconstructor."""
    t = cfg.train
    if t.stage not in ("pretrain", "finetune"):
        raise ConfigError(f"train_reconstructor needs stage pretrain or finetune, got {t.stage}")
    if t.stage == "finetune" and t.two_stage and not t.init_ckpt and resume is None:
        raise ConfigError("two-stage fine-tuning needs a pretrain checkpoint (init_ckpt)")
    if store is None:
        manifest = manifest or DatasetManifest.load(t.manifest)
        store = SceneStore(manifest, "object" if t.stage == "pretrain" else "head",
                           t.lighting_mode)
    model = build_reconstructor(cfg)
    init_hash = None
    if t.init_ckpt and resume is None:
        init_hash = _init_weights(t.init_ckpt, model, "reconstructor", cfg)
    optimizer = _make_optimizer(model, t.lr)
    start = _resume(resume, model, optimizer, "reconstructor", cfg) if resume else 0
    out = Path(out_dir) if out_dir else None
    writer = fh = None
    cols = ["step", "loss", "mse", "perc", "psnr", "lr"]
    if out:
        out.mkdir(parents=True, exist_ok=True)
        fh, writer = _open_metrics(out / "metrics.csv", cols, append=start > 0)
    metrics = []
    try:
        for step in range(start, t.steps):
            rng = step_rng(t.seed, step)
            lr = lr_at(step, t.lr, t.steps, t.warmup)
            for g in optimizer.param_groups:
                g["lr"] = lr
            mse = perc = 0.0
            optimizer.zero_grad(set_to_none=False)
            for _ in range(t.batch_size):
                entry = store.entries[int(rng.integers(len(store)))]
                in_imgs, in_rig, sup_imgs, sup_rig = sample_reconstructor_views(store, entry, cfg, rng)
                cloud = reconstruct(model, in_imgs, in_rig)
                pred = render_rig(cloud, sup_rig)
                parts = reconstruction_loss(pred, sup_imgs, t.mse_w, t.perc_w)
                (parts.total / t.batch_size).backward()
                mse += parts.mse.item() / t.batch_size
                perc += parts.perc.item() / t.batch_size
            optimizer.step()
            total = t.mse_w * mse + t.perc_w * perc  # reported parts add up exactly
            row = {"step": step + 1, "loss": total, "mse": mse, "perc": perc,
                   "psnr": 10 * math.log10(1.0 / max(mse, 1e-12)), "lr": lr}
            if (step + 1) % t.log_every == 0 or step + 1 == t.steps:
                metrics.append(row)
                if writer:
                    writer.writerow(row)
                    fh.flush()
            if callback:
                callback(step + 1, row)
            if out and t.ckpt_every and (step + 1) % t.ckpt_every == 0 and step + 1 < t.steps:
                save_checkpoint(out / f"step_{step + 1:06d}.ckpt", model, "reconstructor", cfg,
                                step + 1, optimizer, {"init_hash": init_hash})
    finally:
        if fh:
            fh.close()
    path = None
    if out:
        path = out / "reconstructor.ckpt"
        save_checkpoint(path, model, "reconstructor", cfg, t.steps, optimizer,
                        {"init_hash": init_hash})
    return TrainResult(model, path, metrics)


class DiffusionTargets:
    """Ring targets and condition images for diffusion training, at model resolution."""

    def __init__(self, store: SceneStore, cfg: RunConfig):
        self.store = store
        self.cfg = cfg
        self.size = cfg.noise_predictor.image_size
        self._cache: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}

    def get(self, entry: ManifestEntry) -> tuple[torch.Tensor, torch.Tensor]:
        """(targets (N, s, s, 3), condition (s, s, 3))."""
        if entry.scene_id not in self._cache:
            n = self.cfg.train.n_views
            images, rig = self.store.ring(entry, n)
            targets = images.clone()
            cond = images[0]
            if not self.cfg.train.input_view_recon:
                d = self.cfg.data
                intr = Intrinsics(d.fov_deg, d.resolution, d.resolution)
                view = ViewRig.from_angles([(rig[0].azimuth_deg, NO_RECON_ELEVATION)],
                                           rig.radius, intr)[0]
                cloud = generate_scene(entry.spec)
                with torch.no_grad():
                    rgb = render_torch(cloud, view.intrinsics, view.pose, BACKGROUND)[0]
                targets[0] = rgb.clamp(0, 1).to(targets.dtype)
            self._cache[entry.scene_id] = (downsample(targets, self.size),
                                           downsample(cond, self.size))
        return self._cache[entry.scene_id]


def diffusion_schedule(cfg: RunConfig) -> DiffusionSchedule:
    d = cfg.diffusion
    return make_schedule(d.timesteps, d.beta_start, d.beta_end, d.variance)


def landmark_template(manifest: DatasetManifest) -> list[list[float]] | None:
    pts = [e.landmarks for e in manifest.entries if e.landmarks]
    return np.mean(np.asarray(pts), axis=0).tolist() if pts else None


def train_diffusion(cfg: RunConfig, out_dir=None, manifest: DatasetManifest | None = None,
                    resume=None, callback: Callable[[int, dict], None] | None = None) -> TrainResult:
    t = cfg.train
    if t.stage != "diffusion":
        raise ConfigError(f"train_diffusion needs stage diffusion, got {t.stage}")
    manifest = manifest or DatasetManifest.load(t.manifest)
    store = SceneStore(manifest, "head", t.lighting_mode)
    if not any(e.ring_views for e in store.entries):
        raise TrainingError("manifest has no ring views")
    targets = DiffusionTargets(store, cfg)
    schedule = diffusion_schedule(cfg)
    view_ids = torch.as_tensor(ring_view_ids(t.n_views))
    model = build_noise_predictor(cfg)
    if t.init_ckpt and resume is None:
        _init_weights(t.init_ckpt, model, "noise_predictor", cfg)
    optimizer = _make_optimizer(model, t.lr)
    start, ema = 0, None
    if resume:
        start = _resume(resume, model, optimizer, "noise_predictor", cfg)
        ema = Checkpoint.load(resume).meta.get("ema_loss")
    out = Path(out_dir) if out_dir else None
    fh = writer = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        fh, writer = _open_metrics(out / "metrics.csv", ["step", "loss", "ema_loss", "lr"],
                                   append=start > 0)
    extra = {"landmark_template": landmark_template(manifest), "n_views": t.n_views}
    metrics = []
    try:
        for step in range(start, t.steps):
            rng = step_rng(t.seed, step)
            gen = step_generator(t.seed, step)
            lr = lr_at(step, t.lr, t.steps, t.warmup)
            for g in optimizer.param_groups:
                g["lr"] = lr
            picks = [store.entries[int(i)] for i in rng.integers(len(store), size=t.batch_size)]
            views, conds = zip(*(targets.get(e) for e in picks))
            info = ddpm_loss(model, torch.stack(views), torch.stack(conds), view_ids, schedule,
                             gen, cfg.diffusion.drop_rate)
            optimizer.zero_grad(set_to_none=False)
            info.loss.backward()
            optimizer.step()
            loss = info.loss.item()
            ema = loss if ema is None else EMA_DECAY * ema + (1 - EMA_DECAY) * loss
            row = {"step": step + 1, "loss": loss, "ema_loss": ema, "lr": lr}
            if (step + 1) % t.log_every == 0 or step + 1 == t.steps:
                metrics.append(row)
                if writer:
                    writer.writerow(row)
                    fh.flush()
            if callback:
                callback(step + 1, row)
            if out and t.ckpt_every and (step + 1) % t.ckpt_every == 0 and step + 1 < t.steps:
                save_checkpoint(out / f"step_{step + 1:06d}.ckpt", model, "noise_predictor", cfg,
                                step + 1, optimizer, {**extra, "ema_loss": ema})
    finally:
        if fh:
            fh.close()
    path = None
    if out:
        path = out / "diffusion.ckpt"
        save_checkpoint(path, model, "noise_predictor", cfg, t.steps, optimizer,
                        {**extra, "ema_loss": ema})
    return TrainResult(model, path, metrics)


# ---------------------------------------------------------------------------
# evaluation helpers

@torch.no_grad()
def evaluate_reconstructor(model: Reconstructor, store: SceneStore, n_ring: int = 6,
                           entries: Sequence[ManifestEntry] | None = None) -> dict:
    """Feed the ``n_ring`` ring views, score renders of every random (held-out) view."""
    scores, losses = [], []
    for entry in entries or store.entries:
        in_imgs, in_rig = store.ring(entry, n_ring)
        tgt, rig = store.random_split(entry)
        pred = render_rig(reconstruct(model, in_imgs, in_rig), rig).clamp(0, 1)
        scores.append(psnr(pred.numpy(), tgt.numpy()))
        losses.append(F.mse_loss(pred, tgt).item())
    return {"psnr": float(np.mean(scores)), "mse": float(np.mean(losses)), "per_scene": scores}


@torch.no_grad()
def heldout_loss(model: Reconstructor, store: SceneStore, cfg: RunConfig, seed: int = 12345) -> float:
    """Mean training-protocol loss on a fixed draw of views per scene."""
    vals = []
    for k, entry in enumerate(store.entries):
        rng = np.random.default_rng([seed, k])
        in_imgs, in_rig, sup_imgs, sup_rig = sample_reconstructor_views(store, entry, cfg, rng)
        pred = render_rig(reconstruct(model, in_imgs, in_rig), sup_rig)
        vals.append(reconstruction_loss(pred, sup_imgs, cfg.train.mse_w,
                                        cfg.train.perc_w).total.item())
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# inference

@dataclass
class InferenceResult:
    cloud: SplatCloud
    views: np.ndarray        # (N, H, W, 3) generated views at reconstructor resolution
    rig: ViewRig
    aligned_input: np.ndarray
    scale: float
    translation: np.ndarray


def end_to_end_infer(image, landmarks, diffusion_ckpt, reconstructor_ckpt, cfg: RunConfig,
                     n_views: int = 6, seed: int = 0, out_dir=None) -> InferenceResult:
    """Align the input, generate the view ring, reconstruct splats; optionally write outputs."""
    d_ck = Checkpoint.load(diffusion_ckpt)
    r_ck = Checkpoint.load(reconstructor_ckpt)
    for ck, kind in ((d_ck, "noise_predictor"), (r_ck, "reconstructor")):
        if ck.meta.get("kind") != kind:
            raise CheckpointError(f"expected a {kind} checkpoint, got {ck.meta.get('kind')}")
        check_fov(ck.meta, cfg)
    noise = build_noise_predictor(cfg, d_ck.meta)
    d_ck.load_model(noise)
    recon = build_reconstructor(cfg, r_ck.meta)
    r_ck.load_model(recon)
    res = int(r_ck.meta.get("resolution", cfg.data.resolution))
    image = np.asarray(image, np.float64)
    template = d_ck.meta.get("landmark_template")
    if template is not None:
        aligned, s, tr = landmark_align(image, landmarks, template, BACKGROUND)
        aligned = warp_scale_translation(image, s, tr, BACKGROUND, out_shape=(res, res))
    else:
        if image.shape[:2] != (res, res):
            raise ValueError(f"input must be {res}x{res} without a landmark template")
        aligned, s, tr = image, 1.0, np.zeros(2)
    y = downsample(torch.as_tensor(aligned, dtype=torch.float32), noise.cfg.image_size)
    d = cfg.diffusion
    sched = make_schedule(noise.cfg.timesteps, d.beta_start, d.beta_end, d.variance)
    gen = ddim_sample(noise, y, n_views, d.sampler_steps, d.guidance, sched, seed)
    views = upsample(gen, res)
    intr = Intrinsics(cfg.data.fov_deg, res, res)
    rig = make_view_ring(0.0, n_views, cfg.data.radius, intr)
    with torch.no_grad():
        cloud = reconstruct(recon, views, rig).detach().numpy()
    result = InferenceResult(cloud, views.numpy().astype(np.float64), rig, aligned, s,
                             np.asarray(tr))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        export_ply(cloud, out / "head.ply")
        for k, v in enumerate(result.views):
            save_png(out / f"view_{k}.png", v)
        rig.save(out / "rig.json")
        (out / "alignment.json").write_text(json.dumps({"scale": s, "translation": list(map(float, tr))}))
    return result
