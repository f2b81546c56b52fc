"""Multi-view denoising diffusion in pixel space.

All views of a scene are corrupted independently but denoised jointly: the
noise predictor always sees the whole stack ``x_t^{1:N}``. Images live in
[-1, 1] inside the chain and in [0, 1] outside it.

Schedules are 1-indexed: entry 0 of every table is the clean state
(``alpha_bar[0] = 1``), entries ``1..T`` the diffusion steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

COND_DROP_RATE = 0.05
DEFAULT_STEPS = 50
DEFAULT_GUIDANCE = 3.0

# Each ring camera gets a fixed embedding slot, keyed by (azimuth offset, elevation sign).
_VIEW_SLOTS = [(0.0, 0.0), (-45.0, 0.0), (45.0, 0.0), (-90.0, 0.0), (90.0, 0.0), (180.0, 0.0),
               (0.0, 1.0), (0.0, -1.0)]
RING_VIEW_IDS = {4: [0, 3, 4, 5], 6: [0, 1, 2, 3, 4, 5], 8: [0, 1, 2, 3, 4, 5, 6, 7]}


class DiffusionError(ValueError):
    pass


def ring_view_ids(n_views: int) -> list[int]:
    if n_views not in RING_VIEW_IDS:
        raise DiffusionError(f"n_views must be one of {sorted(RING_VIEW_IDS)}")
    return list(RING_VIEW_IDS[n_views])


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    betas: np.ndarray       # (T + 1,), betas[0] = 0
    alphas: np.ndarray
    alphas_bar: np.ndarray
    sigmas: np.ndarray

    def check_t(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise DiffusionError(f"timestep out of range [1, {self.T}]")


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2,
                  variance: str = "beta") -> DiffusionSchedule:
    """Linear beta schedule. ``variance`` is ``beta`` (sigma^2 = beta) or ``posterior``."""
    if not 0.0 < beta_start < beta_end < 1.0:
        raise DiffusionError("need 0 < beta_start < beta_end < 1")
    if T < 2:
        raise DiffusionError("T must be at least 2")
    betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alphas = 1.0 - betas
    alphas_bar = np.cumprod(alphas)
    if variance == "beta":
        var = betas.copy()
    elif variance == "posterior":
        var = np.zeros_like(betas)
        var[1:] = betas[1:] * (1.0 - alphas_bar[:-1]) / (1.0 - alphas_bar[1:])
    else:
        raise DiffusionError(f"unknown variance mode {variance!r}")
    return DiffusionSchedule(T, betas, alphas, alphas_bar, np.sqrt(var))


def _bcast(values, like):
    """Per-sample coefficients ``(B,)`` shaped to broadcast against ``like``."""
    if isinstance(like, torch.Tensor):
        v = torch.as_tensor(values, dtype=like.dtype)
    else:
        v = np.asarray(values, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def forward_corrupt(x0, t, noise, schedule: DiffusionSchedule):
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; ``t`` is a scalar or one step per sample.

    ``t = 0`` is accepted and returns ``x0`` (the clean end of the chain).
    """
    if tuple(np.shape(noise)) != tuple(np.shape(x0)):
        raise DiffusionError("noise must have the image shape")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > schedule.T):
        raise DiffusionError(f"timestep out of range [0, {schedule.T}]")
    ab = schedule.alphas_bar[t]
    return _bcast(np.sqrt(ab), x0) * x0 + _bcast(np.sqrt(1.0 - ab), x0) * noise


def to_model_space(images):
    return images * 2.0 - 1.0


def from_model_space(x):
    return (x + 1.0) / 2.0


def per_view_l2(eps, eps_hat) -> torch.Tensor:
    """Mean over batch and views of the (un-squared) L2 norm of each view's noise error."""
    diff = (eps - eps_hat).flatten(start_dim=2)
    return diff.norm(dim=-1).mean()


def sample_condition_drop(batch: int, generator: torch.Generator,
                          rate: float = COND_DROP_RATE) -> torch.Tensor:
    return torch.rand(batch, generator=generator, dtype=torch.float64) < rate


@dataclass
class LossInfo:
    loss: torch.Tensor
    t: torch.Tensor
    dropped: torch.Tensor


def ddpm_loss(model, views, y, view_ids, schedule: DiffusionSchedule, generator: torch.Generator,
              drop_rate: float = COND_DROP_RATE) -> LossInfo:
    """Noise-prediction loss for ``views`` (B, N, H, W, 3) given conditions ``y`` (B, H, W, 3).

    Images are in [0, 1]. One timestep, one noise draw and one condition-drop
    decision per sample.
    """
    b = views.shape[0]
    dtype = views.dtype
    x0 = to_model_space(views)
    t = torch.randint(1, schedule.T + 1, (b,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=dtype)
    dropped = sample_condition_drop(b, generator, drop_rate)
    x_t = forward_corrupt(x0, t.numpy(), eps, schedule)
    eps_hat = model(x_t, t, to_model_space(y), view_ids, dropped)
    return LossInfo(per_view_l2(eps, eps_hat), t, dropped)


EpsFn = Callable[[torch.Tensor, int], torch.Tensor]


def ddpm_step(x_t, t: int, eps_fn: EpsFn, schedule: DiffusionSchedule,
              generator: torch.Generator | None = None):
    """One ancestral step; ``eps_fn`` receives the full joint stack ``x_t^{1:N}``."""
    schedule.check_t(t)
    eps = eps_fn(x_t, t)
    if tuple(np.shape(eps)) != tuple(np.shape(x_t)):
        raise DiffusionError("noise prediction must cover the full view stack")
    beta, alpha, ab = schedule.betas[t], schedule.alphas[t], schedule.alphas_bar[t]
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(alpha)
    if t == 1:
        return mean
    if isinstance(x_t, torch.Tensor):
        z = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    else:
        z = generator.standard_normal(np.shape(x_t))
    return mean + schedule.sigmas[t] * z


def ddpm_sample(eps_fn: EpsFn, x_T, schedule: DiffusionSchedule, generator=None):
    x = x_T
    for t in range(schedule.T, 0, -1):
        x = ddpm_step(x, t, eps_fn, schedule, generator)
    return x


def ddim_timesteps(steps: int, T: int) -> np.ndarray:
    """Descending, evenly spaced timesteps from ``T`` down to 1."""
    if not 1 <= steps <= T:
        raise DiffusionError(f"steps must lie in [1, {T}]")
    if steps == 1:
        return np.array([T])
    return np.round(np.linspace(T, 1, steps)).astype(np.int64)


def ddim_loop(eps_fn: EpsFn, x_T, schedule: DiffusionSchedule, steps: int):
    """Deterministic (eta = 0) DDIM from ``x_T`` to ``x_0``."""
    ts = ddim_timesteps(steps, schedule.T)
    x = x_T
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab, ab_prev = schedule.alphas_bar[t], schedule.alphas_bar[t_prev]
        eps = eps_fn(x, int(t))
        x0_hat = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps
    return x


def guided_eps(model, x_t, t: int, y, view_ids, guidance: float) -> torch.Tensor:
    """Classifier-free guidance: ``g * eps_cond + (1 - g) * eps_uncond``.

    This equals ``eps_uncond + g (eps_cond - eps_uncond)``; written this way
    ``g = 1`` and ``g = 0`` return one branch exactly, and that branch alone
    is evaluated.
    """
    if guidance < 0:
        raise DiffusionError("guidance must be non-negative")
    b = x_t.shape[0]
    tt = torch.full((b,), int(t))
    if guidance == 1.0:
        return model(x_t, tt, y, view_ids, torch.zeros(b, dtype=torch.bool))
    if guidance == 0.0:
        return model(x_t, tt, y, view_ids, torch.ones(b, dtype=torch.bool))
    both = model(torch.cat([x_t, x_t]), torch.cat([tt, tt]), torch.cat([y, y]), view_ids,
                 torch.cat([torch.zeros(b, dtype=torch.bool), torch.ones(b, dtype=torch.bool)]))
    eps_c, eps_u = both[:b], both[b:]
    return guidance * eps_c + (1.0 - guidance) * eps_u


@torch.no_grad()
def ddim_sample(model, y, n_views: int = 6, steps: int = DEFAULT_STEPS,
                guidance: float = DEFAULT_GUIDANCE, schedule: DiffusionSchedule | None = None,
                seed: int = 0, view_ids=None) -> torch.Tensor:
    """Generate the view ring for condition image(s) ``y`` ((H, W, 3) or (B, H, W, 3)) in [0, 1].

    Returns ``(N, H, W, 3)`` (or ``(B, N, H, W, 3)``) clamped to [0, 1]; slot 0
    is the input-view reconstruction.
    """
    schedule = schedule or make_schedule()
    if steps > schedule.T:
        raise DiffusionError(f"steps ({steps}) exceed T ({schedule.T})")
    dtype = next(model.parameters()).dtype
    y = torch.as_tensor(np.asarray(y) if not isinstance(y, torch.Tensor) else y, dtype=dtype)
    single = y.ndim == 3
    if single:
        y = y[None]
    view_ids = torch.as_tensor(ring_view_ids(n_views) if view_ids is None else view_ids)
    b, h, w, _ = y.shape
    gen = torch.Generator().manual_seed(int(seed))
    x_T = torch.randn((b, len(view_ids), h, w, 3), generator=gen, dtype=dtype)
    yc = to_model_space(y)
    x0 = ddim_loop(lambda x, t: guided_eps(model, x, t, yc, view_ids, guidance), x_T,
                   schedule, steps)
    out = from_model_space(x0).clamp(0.0, 1.0)
    return out[0] if single else out
