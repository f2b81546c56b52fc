"""Scaled training experiments shared by the acceptance suite and slow tests."""

from __future__ import annotations

import numpy as np
import torch

from headsplat.camera import Intrinsics, ViewRig
from headsplat.config import load_config
from headsplat.eval import psnr
from headsplat.synthdata import (ELEVATION_RANGE, SceneSpec, dataset_specs,
                                 generate_scene, render_dataset)
from headsplat.training import (SceneStore, evaluate_reconstructor, heldout_loss, reconstruct,
                                render_rig, train_reconstructor)
from headsplat.transformer import Reconstructor

OVERFIT_STEPS = 1000


def heldout_rig(n: int = 8, resolution: int = 64, seed: int = 2024) -> ViewRig:
    """Views drawn independently of every training view."""
    rng = np.random.default_rng(seed)
    angles = list(zip(rng.uniform(0, 360, n), rng.uniform(*ELEVATION_RANGE, n)))
    return ViewRig.from_angles(angles, 2.7, Intrinsics(50, resolution, resolution))


def overfit_config(manifest: str, steps: int = OVERFIT_STEPS):
    return load_config(None, {
        "reconstructor": {"patch": 8, "depth": 6, "dim": 128, "heads": 4},
        "train": {"stage": "finetune", "manifest": manifest, "two_stage": False,
                  "steps": steps, "lr": 1e-3, "warmup": 100, "input_split": "ring",
                  "n_input": 6, "n_novel": 2, "log_every": 50, "seed": 0}})


def run_overfit(root, steps: int = OVERFIT_STEPS) -> dict:
    """One head, six ring inputs, sixteen random supervision views; scored on unseen views."""
    spec = SceneSpec("head", 3)
    manifest = render_dataset([spec], 6, 16, root / "data", resolution=64)
    cfg = overfit_config(str(root / "data" / "manifest.json"), steps)
    store = SceneStore(manifest, "head")
    entry = store.entries[0]
    ring_imgs, ring_rig = store.ring(entry, 6)
    hold = heldout_rig()
    cloud_gt = generate_scene(spec)
    with torch.no_grad():
        hold_gt = render_rig(cloud_gt, hold).clamp(0, 1)

    def score(model: Reconstructor) -> tuple[float, float]:
        with torch.no_grad():
            cloud = reconstruct(model, ring_imgs, ring_rig)
            train = render_rig(cloud, ring_rig).clamp(0, 1)
            held = render_rig(cloud, hold).clamp(0, 1)
        return psnr(train.numpy(), ring_imgs.numpy()), psnr(held.numpy(), hold_gt.numpy())

    from headsplat.training import build_reconstructor

    base_train, base_held = score(build_reconstructor(cfg))
    result = train_reconstructor(cfg, root / "run", store=store)
    train_psnr, held_psnr = score(result.model)
    return {"cfg": cfg, "model": result.model, "checkpoint": result.checkpoint,
            "store": store, "baseline_train": base_train, "baseline_heldout": base_held,
            "train_psnr": train_psnr, "heldout_psnr": held_psnr}


def toy_overrides(**train) -> dict:
    """The standard 32x32 toy configuration used by the ablation orderings."""
    return {"data": {"resolution": 32},
            "reconstructor": {"patch": 4, "depth": 2, "dim": 64, "heads": 4},
            "train": {"lr": 1e-3, "warmup": 20, "log_every": 1000, "input_split": "ring",
                      "n_input": 6, "n_novel": 2, **train}}


def toy_datasets(root) -> dict:
    """Object pretraining scenes, head training scenes and unseen head test scenes."""
    sets = {"objects": dataset_specs("object", 8),
            "heads": dataset_specs("head", 4, split="train"),
            "test": dataset_specs("head", 4, split="eval")}
    return {name: render_dataset(specs, 8, 6, root / name, resolution=32)
            for name, specs in sets.items()}


def two_stage_ablation(root, data: dict, seed: int, pretrain_steps: int = 300,
                       finetune_steps: int = 150) -> dict:
    """Held-out loss of fine-tuning from object pretraining versus training heads from scratch."""
    test = SceneStore(data["test"], "head")
    pre = load_config(None, toy_overrides(stage="pretrain", steps=pretrain_steps, seed=seed))
    ckpt = train_reconstructor(pre, root / f"pre{seed}", data["objects"]).checkpoint
    out = {}
    for name, init in (("two_stage", str(ckpt)), ("single_stage", "")):
        cfg = load_config(None, toy_overrides(stage="finetune", steps=finetune_steps, seed=seed,
                                              init_ckpt=init, two_stage=bool(init)))
        model = train_reconstructor(cfg, None, data["heads"]).model
        out[name] = heldout_loss(model, test, cfg)
    return out


def view_count_ablation(root, data: dict, seed: int, steps: int = 800) -> dict:
    """Held-out PSNR on unseen heads for models trained and fed with 4 or 6 ring views."""
    test = SceneStore(data["test"], "head")
    out = {}
    for n in (4, 6):
        cfg = load_config(None, toy_overrides(stage="finetune", steps=steps, seed=seed,
                                              two_stage=False, n_input=n))
        model = train_reconstructor(cfg, None, data["heads"]).model
        out[n] = evaluate_reconstructor(model, test, n_ring=n)["psnr"]
    return out
