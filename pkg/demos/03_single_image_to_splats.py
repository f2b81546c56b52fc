"""The whole pipeline at toy scale: train both models, then lift one image to splats.

    python3 demos/03_single_image_to_splats.py --out /tmp/demo03

One front view goes through landmark alignment, the multi-view diffusion
model generates the six-view ring, and the reconstructor turns the ring into
pixel-aligned splats written as a PLY. The defaults train for a couple of
minutes, so the generated views are blurry; raise the step counts for more.
"""
import argparse
import json
from pathlib import Path

from headsplat.cli import main as headsplat

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demo03")
parser.add_argument("--recon-steps", type=int, default=150)
parser.add_argument("--diffusion-steps", type=int, default=1500)
args = parser.parse_args()
out = Path(args.out)


def run(*argv):
    argv = [str(a) for a in argv]
    print("headsplat", " ".join(argv))
    code = headsplat(argv)
    if code:
        raise SystemExit(code)


config = out / "toy.ini"
out.mkdir(parents=True, exist_ok=True)
config.write_text("[data]\nresolution = 64\n[reconstructor]\npatch = 8\n"
                  "[noise_predictor]\nimage_size = 16\n")
run("gen-data", "--config", config, "--scenes", 4, "--ring", 6, "--random", 8,
    "--out", out / "data")
run("train", "--config", config, "--stage", "finetune", "--two-stage", "off",
    "--manifest", out / "data" / "manifest.json", "--steps", args.recon_steps,
    "--lr", 1e-3, "--out", out / "recon", "-v", "--log-every", 25)
run("train", "--config", config, "--stage", "diffusion", "--batch-size", 4,
    "--manifest", out / "data" / "manifest.json", "--steps", args.diffusion_steps,
    "--lr", 1e-3, "--out", out / "diffusion", "-v", "--log-every", 250)

# A front view and its landmarks from the dataset stand in for a user photo.
manifest = json.loads((out / "data" / "manifest.json").read_text())
entry = manifest["entries"][0]
(out / "landmarks.json").write_text(json.dumps(entry["landmarks"]))
run("reconstruct", "--config", config, "--input", out / "data" / entry["images"][0],
    "--landmarks", out / "landmarks.json",
    "--diffusion-ckpt", out / "diffusion" / "diffusion.ckpt",
    "--reconstructor-ckpt", out / "recon" / "reconstructor.ckpt", "--out", out / "head")
run("render", "--config", config, "--ply", out / "head" / "head.ply", "--turntable", 12,
    "--out", out / "turntable")
print(f"generated views and head.ply in {out / 'head'}, turntable in {out / 'turntable'}")
