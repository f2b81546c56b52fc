"""Command-line entry point: ``headsplat <subcommand> --help`` lists every flag.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Settings come from the packaged defaults, then ``--config``, then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import warnings
from pathlib import Path

import numpy as np

log = logging.getLogger("headsplat")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or inputs detected before any work starts."""


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file layered over the packaged defaults")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: from config)")
    p.add_argument("--jobs", type=int, default=None, help="cap on worker threads")
    p.add_argument("--out", required=True, help="output directory (nothing is written elsewhere)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _on_off(value: str) -> bool:
    low = value.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="headsplat",
                                     description="Single-image to Gaussian-splat head pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="render a procedural dataset")
    _common(p)
    p.add_argument("--scenes", type=int, help="total scenes (identities x appearances)")
    p.add_argument("--appearances", type=int, help="appearance variants per identity")
    p.add_argument("--ring", type=int, help="ring views per scene (0, 4, 6 or 8)")
    p.add_argument("--random", type=int, help="random views per scene")
    p.add_argument("--resolution", type=int, help="image side in pixels")
    p.add_argument("--category", choices=["head", "object"], default="head")
    p.add_argument("--split", choices=["pretrain", "train", "eval"],
                   help="seed range (default: pretrain for objects, train for heads)")
    p.add_argument("--lighting", choices=["ambient", "random_env"])

    p = sub.add_parser("train", help="pretrain, fine-tune or train the diffusion model")
    _common(p)
    p.add_argument("--stage", choices=["pretrain", "finetune", "diffusion"])
    p.add_argument("--manifest", help="dataset manifest.json")
    p.add_argument("--init-ckpt", help="pretrained reconstructor for fine-tuning")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--views", type=int, choices=[4, 6, 8], help="diffusion ring size")
    p.add_argument("--input-view-recon", type=_on_off, metavar="on|off")
    p.add_argument("--two-stage", type=_on_off, metavar="on|off")
    p.add_argument("--lighting-mode", choices=["any", "ambient", "random_env"])
    p.add_argument("--log-every", type=int)
    p.add_argument("--ckpt-every", type=int)

    p = sub.add_parser("reconstruct", help="single image to splats and generated views")
    _common(p)
    p.add_argument("--input", required=True, help="input PNG")
    p.add_argument("--landmarks", required=True, help="JSON list of [x, y] input landmarks")
    p.add_argument("--diffusion-ckpt", required=True)
    p.add_argument("--reconstructor-ckpt", required=True)
    p.add_argument("--views", type=int, choices=[4, 6, 8], default=6)
    p.add_argument("--steps", type=int, help="sampler steps")
    p.add_argument("--guidance", type=float, help="guidance scale")

    p = sub.add_parser("render", help="render a PLY from a rig or a turntable")
    _common(p)
    p.add_argument("--ply", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--rig", help="rig JSON")
    group.add_argument("--turntable", type=int, metavar="N", help="N views at 360/N degree steps")
    p.add_argument("--elevation", type=float, default=0.0, help="turntable elevation (degrees)")
    p.add_argument("--resolution", type=int, help="turntable image side")

    p = sub.add_parser("eval", help="score method renders against a benchmark manifest")
    _common(p)
    p.add_argument("--manifest", required=True, help="benchmark manifest JSON")
    p.add_argument("--method-dir", required=True, help="<id>/<view>.png and <view>.json files")
    p.add_argument("--method-radius", type=float, help="camera radius of the method")

    p = sub.add_parser("deform", help="fit a deformation chain to a sequence of PLY frames")
    _common(p)
    p.add_argument("--frames", required=True, help="directory of PLY frames (sorted by name)")
    p.add_argument("--rig", help="rig JSON for the fitting views (default: 6-view ring)")
    p.add_argument("--steps", type=int, default=200, help="optimizer steps per frame")
    p.add_argument("--lr", type=float, default=1e-3)
    return parser


def _setup(args) -> None:
    import numba
    import torch

    if args.jobs is not None:
        if args.jobs < 1:
            raise UsageError("--jobs must be positive")
        torch.set_num_threads(args.jobs)
        numba.set_num_threads(min(args.jobs, numba.config.NUMBA_NUM_THREADS))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")


def _config(args, overrides: dict | None = None):
    from .config import load_config

    overrides = dict(overrides or {})
    if args.seed is not None:
        overrides.setdefault("data", {})["seed"] = args.seed
        overrides.setdefault("train", {})["seed"] = args.seed
    return load_config(args.config, overrides)


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def cmd_gen_data(args) -> int:
    from .synthdata import dataset_specs, render_dataset

    cfg = _config(args, {"data": {"scenes": args.scenes, "appearances": args.appearances,
                                  "ring_views": args.ring, "random_views": args.random,
                                  "resolution": args.resolution, "lighting": args.lighting}})
    d = cfg.data
    if d.scenes < 1 or d.appearances < 1:
        raise UsageError("--scenes and --appearances must be positive")
    specs = dataset_specs(args.category, d.scenes, d.appearances, d.lighting, args.split, d.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    manifest = render_dataset(specs, d.ring_views, d.random_views, out, d.resolution, d.fov_deg,
                              d.radius, (d.elevation_min, d.elevation_max))
    log.info("%d scenes, %d images -> %s", len(manifest.entries),
             sum(len(e.images) for e in manifest.entries), out / "manifest.json")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train_diffusion, train_reconstructor

    cfg = _config(args, {"train": {
        "stage": args.stage, "manifest": args.manifest, "init_ckpt": args.init_ckpt,
        "steps": args.steps, "lr": args.lr, "batch_size": args.batch_size, "n_views": args.views,
        "input_view_recon": args.input_view_recon, "two_stage": args.two_stage,
        "lighting_mode": args.lighting_mode, "log_every": args.log_every,
        "ckpt_every": args.ckpt_every}})
    t = cfg.train
    if not t.manifest:
        raise UsageError("--manifest is required")
    _require(t.manifest, "manifest")
    if t.init_ckpt:
        _require(t.init_ckpt, "init checkpoint")
    if args.resume:
        _require(args.resume, "resume checkpoint")
    if t.stage == "finetune" and t.two_stage and not t.init_ckpt and not args.resume:
        raise UsageError("two-stage fine-tuning needs --init-ckpt (or pass --two-stage off)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())

    def report(step, row):
        if step % t.log_every == 0:
            log.info("step %d loss %.5f", step, row["loss"])

    fn = train_diffusion if t.stage == "diffusion" else train_reconstructor
    result = fn(cfg, out, resume=args.resume, callback=report)
    log.info("checkpoint -> %s", result.checkpoint)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from .eval import load_landmarks
    from .splat import load_png
    from .training import end_to_end_infer

    image_path = _require(args.input, "input image")
    lm_path = _require(args.landmarks, "landmarks file")
    _require(args.diffusion_ckpt, "diffusion checkpoint")
    _require(args.reconstructor_ckpt, "reconstructor checkpoint")
    cfg = _config(args, {"diffusion": {"sampler_steps": args.steps, "guidance": args.guidance}})
    end_to_end_infer(load_png(image_path), load_landmarks(lm_path), args.diffusion_ckpt,
                     args.reconstructor_ckpt, cfg, n_views=args.views, seed=cfg.train.seed,
                     out_dir=args.out)
    return EXIT_OK


def cmd_render(args) -> int:
    from .camera import Intrinsics, ViewRig
    from .splat import import_ply, render, save_png
    from .synthdata import BACKGROUND

    ply = _require(args.ply, "PLY file")
    cfg = _config(args, {"data": {"resolution": args.resolution}})
    cloud = import_ply(ply)
    if args.rig:
        rig = ViewRig.load(_require(args.rig, "rig file"))
    else:
        if args.turntable < 1:
            raise UsageError("--turntable needs at least one view")
        d = cfg.data
        step = 360.0 / args.turntable
        rig = ViewRig.from_angles([(k * step, args.elevation) for k in range(args.turntable)],
                                  d.radius, Intrinsics(d.fov_deg, d.resolution, d.resolution))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, view in enumerate(rig):
        save_png(out / f"view_{k:03d}.png",
                 render(cloud, view.intrinsics, view.pose, BACKGROUND).rgb)
    rig.save(out / "rig.json")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .eval import run_benchmark

    manifest = _require(args.manifest, "benchmark manifest")
    _require(args.method_dir, "method directory")
    cfg = _config(args)
    radius = args.method_radius if args.method_radius is not None else cfg.data.radius
    report = run_benchmark(manifest, args.method_dir, method_radius=radius)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json", out / "report.csv")
    print(json.dumps({"macro": report.macro, "micro": report.micro, "rows": len(report.rows),
                      "skipped": report.skipped_subjects}))
    if report.partial:
        log.warning("partial run: %d subject(s) skipped", len(report.skipped_subjects))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_deform(args) -> int:
    from .camera import Intrinsics, ViewRig, make_view_ring
    from .deform4d import DeformConfig, fit_sequence
    from .splat import import_ply

    frames_dir = _require(args.frames, "frames directory")
    paths = sorted(frames_dir.glob("*.ply"))
    if not paths:
        raise UsageError(f"no .ply frames in {frames_dir}")
    cfg = _config(args)
    d = cfg.data
    rig = (ViewRig.load(_require(args.rig, "rig file")) if args.rig
           else make_view_ring(0.0, 6, d.radius, Intrinsics(d.fov_deg, d.resolution,
                                                             d.resolution)))
    clouds = [import_ply(p) for p in paths]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if len(clouds) == 1:
        warnings.warn("single frame: copying the anchor unchanged")
        shutil.copyfile(paths[0], out / "frame_000.ply")
        (out / "sequence.json").write_text(json.dumps(
            {"frames": [{"frame": 0, "file": "frame_000.ply", "timestamp": 0,
                         "source": paths[0].name}]}, indent=1))
        return EXIT_OK
    import torch

    torch.manual_seed(cfg.train.seed)
    seq = fit_sequence(clouds, rig, args.steps, args.lr, DeformConfig(seed=cfg.train.seed))
    seq.save(out)
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "reconstruct": cmd_reconstruct,
            "render": cmd_render, "eval": cmd_eval, "deform": cmd_deform}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    from .config import ConfigError
    from .eval import LandmarkError
    from .splat import PlyError, SplatError
    from .transformer import CheckpointError

    try:
        _setup(args)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, LandmarkError, PlyError, SplatError, CheckpointError,
            FileNotFoundError) as exc:
        print(f"headsplat {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"headsplat {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
