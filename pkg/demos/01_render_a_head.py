"""Generate a procedural head, render its view ring, and check renderer gradients.

    python3 demos/01_render_a_head.py --out /tmp/demo01
"""
import argparse
from pathlib import Path

import torch

from headsplat.camera import Intrinsics, make_view_ring
from headsplat.splat import export_ply, render, render_torch, save_png
from headsplat.splat.cloud import FIELDS
from headsplat.synthdata import BACKGROUND, SceneSpec, generate_scene

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demo01")
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

# A head is a few thousand anisotropic splats: skin ellipsoid, hair cap, eyes, nose, mouth.
cloud = generate_scene(SceneSpec("head", args.seed))
print(f"{len(cloud)} splats")
export_ply(cloud, out / "head.ply")

# The six-view ring used for generation: input azimuth, +-45, +-90 and the back.
rig = make_view_ring(0.0, 6, 2.7, Intrinsics(50, 128, 128))
for k, view in enumerate(rig):
    img = render(cloud, view.intrinsics, view.pose, BACKGROUND)
    save_png(out / f"ring_{k}.png", img.rgb)
    print(f"view {k}: azimuth {view.azimuth_deg:6.1f}, coverage {img.alpha.mean():.2f}")

# Gradients flow from pixels back to every splat parameter.
params = cloud.torch(torch.float64, requires_grad=True)
rgb, _, _ = render_torch(params, rig[1].intrinsics, rig[1].pose, BACKGROUND)
rgb.mean().backward()
for name in FIELDS:
    grad = getattr(params, name).grad
    print(f"d(mean pixel)/d({name}): max |grad| {grad.abs().max().item():.3e}")
print(f"wrote {out}")
