"""Transformer backbone shared by the reconstructor and the noise predictor.

Blocks are Pre-LayerNorm with residual connections: ``x + MHSA(LN(x))`` then
``x + MLP(LN(x))``. Output projections start at zero, so a fresh block is the
identity map. Multi-view attention is plain self-attention over the tokens
of every view at once.

Checkpoints are a flat binary: the magic ``HSCK``, a u64 header length, a
UTF-8 JSON header ``{"tensors": {name: {"offset", "shape"}}, "meta": {...}}``
and then little-endian f32 data.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from .camera import ViewRig, rig_pluckers
from .splat import SplatCloud
from .tokenizer import (DEFAULT_FAR, DEFAULT_NEAR, GAUSSIAN_CHANNELS, activate, from_patches,
                        patchify, rig_rays, to_patches)

INIT_STD = 0.02


@dataclass(frozen=True)
class BlockConfig:
    depth: int = 6
    dim: int = 128
    heads: int = 4
    mlp_ratio: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"model dim {self.dim} is not divisible by {self.heads} heads")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")


def init_linear(layer: nn.Linear, zero: bool = False) -> None:
    if zero:
        nn.init.zeros_(layer.weight)
    else:
        nn.init.trunc_normal_(layer.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)


class AttentionBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(round(dim * mlp_ratio))
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        for layer in (self.qkv, self.fc1):
            init_linear(layer)
        for layer in (self.proj, self.fc2):
            init_linear(layer, zero=True)

    def attend(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = rearrange(self.qkv(x), "b t (three h d) -> three b h t d",
                            three=3, h=self.heads)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(rearrange(out, "b h t d -> b t (h d)"))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attend(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class Backbone(nn.Module):
    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(AttentionBlock(cfg.dim, cfg.heads, cfg.mlp_ratio)
                                    for _ in range(cfg.depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def attention_block(x: torch.Tensor, block: AttentionBlock) -> torch.Tensor:
    if x.ndim != 3 or x.shape[-1] != block.norm1.normalized_shape[0]:
        raise ValueError(f"expected (B, T, {block.norm1.normalized_shape[0]}) tokens, "
                         f"got {tuple(x.shape)}")
    return block(x)


def multiview_attend(x: torch.Tensor, backbone: Backbone) -> torch.Tensor:
    """Joint attention over a ``(B, V, H', W', C)`` grid, treating all views as one sequence."""
    if x.ndim != 5:
        raise ValueError(f"expected a (B, V, H, W, C) tensor, got {tuple(x.shape)}")
    b, v, h, w, _ = x.shape
    out = backbone(rearrange(x, "b v h w c -> b (v h w) c"))
    return rearrange(out, "b (v h w) c -> b v h w c", v=v, h=h, w=w)


# ---------------------------------------------------------------------------
# reconstructor

@dataclass(frozen=True)
class ReconstructorConfig:
    patch: int = 4
    depth: int = 6
    dim: int = 128
    heads: int = 4
    mlp_ratio: float = 4.0
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR
    init_scale: float = 0.02  # world units, starting splat size
    seed: int = 0

    @property
    def blocks(self) -> BlockConfig:
        return BlockConfig(self.depth, self.dim, self.heads, self.mlp_ratio, self.seed)


class Reconstructor(nn.Module):
    """Multi-view images plus Plücker rays -> one pixel-aligned Gaussian per pixel."""

    def __init__(self, cfg: ReconstructorConfig = ReconstructorConfig()):
        super().__init__()
        self.cfg = cfg
        p = cfg.patch
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.embed = nn.Linear(9 * p * p, cfg.dim)
            self.backbone = Backbone(cfg.blocks)
            self.norm = nn.LayerNorm(cfg.dim)
            self.decode = nn.Linear(cfg.dim, GAUSSIAN_CHANNELS * p * p)
            init_linear(self.embed)
            init_linear(self.decode)
        bias = torch.zeros(GAUSSIAN_CHANNELS)
        bias[1:4] = math.log(cfg.init_scale)
        bias[4] = 1.0
        with torch.no_grad():
            self.decode.bias.copy_(bias.repeat(p * p))

    def raw(self, images: torch.Tensor, pluckers: torch.Tensor) -> torch.Tensor:
        """``(B, V, H, W, 3)`` images in [0, 1] -> ``(B, V, H, W, 14)`` raw channels."""
        b, v, h, w, _ = images.shape
        grid = patchify(images * 2.0 - 1.0, pluckers, self.cfg.patch, self.embed)
        tokens = self.norm(self.backbone(grid.tokens))
        return from_patches(self.decode(tokens), self.cfg.patch, v, h, w)

    def forward(self, images: torch.Tensor, pluckers: torch.Tensor, origins: torch.Tensor,
                dirs: torch.Tensor) -> list[SplatCloud]:
        raw = self.raw(images, pluckers)
        return [activate(raw[i], origins[i], dirs[i], self.cfg.near, self.cfg.far)
                for i in range(raw.shape[0])]


def rig_inputs(rig: ViewRig, dtype=torch.float32) -> tuple[torch.Tensor, ...]:
    """Plücker maps, ray origins and ray directions for one rig, each ``(V, H, W, .)``."""
    origins, dirs = rig_rays(rig, dtype)
    return torch.as_tensor(rig_pluckers(rig), dtype=dtype), origins, dirs


def reconstructor_forward(images, rig: ViewRig, model: Reconstructor) -> SplatCloud:
    """Single scene: ``(V, H, W, 3)`` images on ``rig`` -> a cloud of ``V*H*W`` splats."""
    dtype = next(model.parameters()).dtype
    images = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor)
                             else images, dtype=dtype)
    if images.shape[0] != len(rig):
        raise ValueError(f"{images.shape[0]} images for a {len(rig)}-view rig")
    pl, o, d = rig_inputs(rig, dtype)
    return model(images[None], pl[None], o[None], d[None])[0]


# ---------------------------------------------------------------------------
# diffusion noise predictor

@dataclass(frozen=True)
class NoisePredictorConfig:
    image_size: int = 32
    patch: int = 4
    depth: int = 4
    dim: int = 96
    heads: int = 4
    mlp_ratio: float = 4.0
    n_view_ids: int = 8
    timesteps: int = 1000
    time_dim: int = 64
    seed: int = 0

    @property
    def blocks(self) -> BlockConfig:
        return BlockConfig(self.depth, self.dim, self.heads, self.mlp_ratio, self.seed)

    @property
    def patches(self) -> int:
        return (self.image_size // self.patch) ** 2


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features ``(B, dim)`` for integer timesteps ``(B,)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class NoisePredictor(nn.Module):
    """Joint noise prediction for all views given a condition image.

    Tokens of the noisy views get the timestep embedding, a learned per-view
    embedding and a learned per-patch position; the condition image's tokens
    are appended to the sequence (or replaced by a learned null token when the
    condition is dropped).
    """

    def __init__(self, cfg: NoisePredictorConfig = NoisePredictorConfig()):
        super().__init__()
        if cfg.image_size % cfg.patch:
            raise ValueError("image size must be divisible by the patch size")
        self.cfg = cfg
        p, d = cfg.patch, cfg.dim
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.x_embed = nn.Linear(3 * p * p, d)
            self.y_embed = nn.Linear(3 * p * p, d)
            self.t_embed = nn.Linear(cfg.time_dim, d)
            self.view_embed = nn.Parameter(torch.zeros(cfg.n_view_ids, d))
            self.cond_embed = nn.Parameter(torch.zeros(d))
            self.null_token = nn.Parameter(torch.zeros(d))
            self.pos_embed = nn.Parameter(torch.zeros(cfg.patches, d))
            self.backbone = Backbone(cfg.blocks)
            self.norm = nn.LayerNorm(d)
            self.out = nn.Linear(d, 3 * p * p)
            for layer in (self.x_embed, self.y_embed, self.t_embed):
                init_linear(layer)
            for prm in (self.view_embed, self.cond_embed, self.null_token, self.pos_embed):
                nn.init.trunc_normal_(prm, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
            init_linear(self.out, zero=True)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, y: torch.Tensor,
                view_ids: torch.Tensor, drop_cond: torch.Tensor | None = None) -> torch.Tensor:
        """``x_t`` (B, N, H, W, 3), ``t`` (B,), ``y`` (B, H, W, 3), ``view_ids`` (N,) or (B, N).

        ``drop_cond`` (B,) bool swaps the condition tokens for the null token.
        """
        cfg = self.cfg
        b, n, h, w, _ = x_t.shape
        if h != cfg.image_size or w != cfg.image_size:
            raise ValueError(f"expected {cfg.image_size}x{cfg.image_size} views, got {h}x{w}")
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(b)
        if torch.any(t < 1) or torch.any(t > cfg.timesteps):
            raise ValueError(f"timesteps must lie in [1, {cfg.timesteps}]")
        view_ids = torch.as_tensor(view_ids, dtype=torch.long)
        if view_ids.ndim == 1:
            view_ids = view_ids.expand(b, n)
        dtype = self.x_embed.weight.dtype
        temb = self.t_embed(timestep_embedding(t, cfg.time_dim).to(dtype))  # (B, D)

        xt = to_patches(x_t, cfg.patch).to(dtype)
        xt = rearrange(self.x_embed(xt), "b (v k) d -> b v k d", v=n)
        xt = xt + self.view_embed[view_ids][:, :, None] + self.pos_embed + temb[:, None, None]

        yt = self.y_embed(to_patches(y[:, None], cfg.patch).to(dtype))  # (B, K, D)
        if drop_cond is not None:
            drop = torch.as_tensor(drop_cond, dtype=torch.bool).reshape(b, 1, 1)
            yt = torch.where(drop, self.null_token.expand_as(yt), yt)
        yt = yt + self.cond_embed + self.pos_embed + temb[:, None]

        tokens = torch.cat([rearrange(xt, "b v k d -> b (v k) d"), yt], dim=1)
        tokens = self.norm(self.backbone(tokens))[:, : n * cfg.patches]
        return from_patches(self.out(tokens), cfg.patch, n, h, w)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"HSCK"


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, torch.Tensor | np.ndarray], meta: dict | None = None) -> None:
    index, blobs, offset = {}, [], 0
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f4")
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": index, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<Q", len(header)) + header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> tuple[dict[str, torch.Tensor], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12:12 + n])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    body = raw[12 + n:]
    out = {}
    for name, entry in header["tensors"].items():
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + 4 * count > len(body):
            raise CheckpointError(f"{path}: tensor {name!r} is truncated")
        arr = np.frombuffer(body, "<f4", count, start).reshape(entry["shape"])
        out[name] = torch.from_numpy(arr.copy())
    return out, header.get("meta", {})


def config_dict(cfg) -> dict:
    return asdict(cfg)
