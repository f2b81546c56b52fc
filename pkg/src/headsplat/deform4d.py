"""Frame-to-frame Gaussian deformation for 4D sequences.

Each new frame gets its own small MLP that maps a splat's position to
``(dx, dy, dz, d_opacity, d_log_scale)``; it is fit by rendering the warped
previous frame against that frame's target renders, and the chain continues
from the warped result. The anchor frame is never modified.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .camera import ViewRig
from .splat import SplatCloud, export_ply, render_torch
from .synthdata import BACKGROUND


@dataclass(frozen=True)
class DeformConfig:
    layers: int = 8
    width: int = 128
    encoding: bool = True
    n_freqs: int = 4
    seed: int = 0


def positional_encoding(x: torch.Tensor, n_freqs: int) -> torch.Tensor:
    feats = [x]
    for k in range(n_freqs):
        feats += [torch.sin((2.0 ** k) * np.pi * x), torch.cos((2.0 ** k) * np.pi * x)]
    return torch.cat(feats, dim=-1)


class DeformationField(nn.Module):
    def __init__(self, cfg: DeformConfig = DeformConfig()):
        super().__init__()
        if cfg.layers < 2:
            raise ValueError("the deformation MLP needs at least two layers")
        self.cfg = cfg
        in_dim = 3 * (1 + 2 * cfg.n_freqs) if cfg.encoding else 3
        dims = [in_dim] + [cfg.width] * (cfg.layers - 1) + [5]
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        nn.init.zeros_(self.layers[-1].weight)
        nn.init.zeros_(self.layers[-1].bias)

    def forward(self, positions: torch.Tensor) -> torch.Tensor:
        x = positional_encoding(positions, self.cfg.n_freqs) if self.cfg.encoding else positions
        for layer in self.layers[:-1]:
            x = torch.relu(layer(x))
        return self.layers[-1](x)


def apply_deltas(cloud: SplatCloud, deltas) -> SplatCloud:
    """Warp a cloud by per-splat (or broadcast) ``(dx, dy, dz, d_opacity, d_log_scale)``."""
    c = cloud if cloud.is_torch else cloud.torch(torch.float64)
    d = torch.as_tensor(deltas, dtype=c.positions.dtype)
    d = d.expand(len(c), 5) if d.ndim == 1 else d
    return SplatCloud(c.positions + d[:, :3], c.scales * torch.exp(d[:, 4:5]), c.rotations,
                      torch.clamp(c.opacities + d[:, 3], 0.0, 1.0), c.colors)


def apply_deformation(cloud: SplatCloud, field: DeformationField) -> SplatCloud:
    c = cloud if cloud.is_torch else cloud.torch(next(field.parameters()).dtype)
    return apply_deltas(c, field(c.positions))


@dataclass
class GaussianSequence:
    canonical: SplatCloud
    frames: list[SplatCloud]          # frames[0] is the anchor
    timestamps: list[float]
    initial_loss: list[float] = field(default_factory=list)  # identity deformation, per frame
    final_loss: list[float] = field(default_factory=list)
    mean_offset: list[list[float]] = field(default_factory=list)

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        index = []
        for k, (cloud, ts) in enumerate(zip(self.frames, self.timestamps)):
            name = f"frame_{k:03d}.ply"
            export_ply(cloud, out / name)
            entry = {"frame": k, "file": name, "timestamp": ts}
            if k:
                entry.update(initial_loss=self.initial_loss[k - 1],
                             final_loss=self.final_loss[k - 1])
            index.append(entry)
        path = out / "sequence.json"
        path.write_text(json.dumps({"frames": index}, indent=1))
        return path


def _render_all(cloud: SplatCloud, rig: ViewRig, background) -> torch.Tensor:
    return torch.stack([render_torch(cloud, v.intrinsics, v.pose, background)[0] for v in rig])


def fit_sequence(frame_clouds: Sequence[SplatCloud], rig: ViewRig, steps_per_frame: int = 200,
                 lr: float = 1e-3, cfg: DeformConfig = DeformConfig(),
                 timestamps: Sequence[float] | None = None,
                 background=BACKGROUND) -> GaussianSequence:
    """Autoregressively fit one deformation field per frame after the anchor.

    The returned field for each frame is the best one seen during fitting, with
    the identity (zero) field as the starting candidate, so the fitted loss
    never exceeds the identity loss.
    """
    if not frame_clouds:
        raise ValueError("fit_sequence needs at least one frame")
    timestamps = list(timestamps) if timestamps is not None else list(range(len(frame_clouds)))
    anchor = frame_clouds[0].numpy()
    n = len(anchor)
    if any(len(c) != n for c in frame_clouds):
        raise ValueError("all frames must have the same number of splats")
    if len(frame_clouds) == 1:
        warnings.warn("single frame: the sequence is just the anchor")
    seq = GaussianSequence(anchor, [anchor], timestamps)
    prev = anchor.torch(torch.float32)
    for k in range(1, len(frame_clouds)):
        with torch.no_grad():
            target = _render_all(frame_clouds[k].torch(torch.float32), rig, background)
        fld = DeformationField(DeformConfig(cfg.layers, cfg.width, cfg.encoding, cfg.n_freqs,
                                            cfg.seed + k))
        opt = torch.optim.Adam(fld.parameters(), lr=lr)
        best_loss, best_state = None, None
        for step in range(steps_per_frame + 1):
            loss = torch.mean((_render_all(apply_deformation(prev, fld), rig, background)
                               - target) ** 2)
            value = loss.item()
            if step == 0:
                seq.initial_loss.append(value)
            if best_loss is None or value < best_loss:
                best_loss = value
                best_state = {key: v.clone() for key, v in fld.state_dict().items()}
            if step == steps_per_frame:
                break
            opt.zero_grad()
            loss.backward()
            opt.step()
        fld.load_state_dict(best_state)
        with torch.no_grad():
            deltas = fld(prev.positions)
            prev = apply_deltas(prev, deltas).detach()
        seq.final_loss.append(best_loss)
        seq.mean_offset.append(deltas[:, :3].mean(dim=0).tolist())
        seq.frames.append(prev.numpy())
    return seq
