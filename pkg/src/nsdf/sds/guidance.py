"""Score-distillation machinery: timesteps, noising, CFG, gradient assembly,
multi-view grid composition, and the glue that routes oracle gradients back
into rendered-image nodes through differentiable resizing.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..losses import SdsInjection
from .noise import FrozenNoise, noise_image
from .schedule import DEFAULT_SCHEDULE, DiffusionSchedule

DEFAULT_T_MIN = 0.0
DEFAULT_T_MAX = 0.5
ORACLE_RESOLUTION = 512
MULTIVIEW_TEMPLATE = "renders of the same ( {base} ) from different viewpoints"

MODE_COLOR = "color_sds"
MODE_SINGLE = "normal_sds"
MODE_MULTIVIEW = "multiview_normal_sds"


def sample_timestep(rng: np.random.Generator, t_min: float = DEFAULT_T_MIN,
                    t_max: float = DEFAULT_T_MAX) -> float:
    if not (0.0 <= t_min < t_max <= 1.0):
        raise ValueError(f"invalid timestep interval [{t_min}, {t_max}]")
    return float(rng.uniform(t_min, t_max))


def noisy_latent(x: np.ndarray, t: float, eps: np.ndarray,
                 schedule: DiffusionSchedule = DEFAULT_SCHEDULE) -> np.ndarray:
    if x.shape != eps.shape:
        raise ValueError(f"image/noise shape mismatch {x.shape} vs {eps.shape}")
    return float(schedule.alpha(t)) * x + float(schedule.sigma(t)) * eps


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, scale: float) -> np.ndarray:
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("CFG branch shapes differ")
    return eps_uncond + scale * (eps_cond - eps_uncond)


def sds_gradient(x: np.ndarray, t: float, eps: np.ndarray,
                 predict: Callable[[np.ndarray, float, str], tuple[np.ndarray, np.ndarray]],
                 prompt: str, cfg_scale: float,
                 schedule: DiffusionSchedule = DEFAULT_SCHEDULE) -> np.ndarray:
    """w(t) * (eps_hat - eps) at the image; the denoiser Jacobian is never used.

    ``predict(x_t, t, prompt)`` returns the conditional and unconditional
    noise predictions at the noised input.
    """
    x_t = noisy_latent(x, t, eps, schedule)
    eps_cond, eps_uncond = predict(x_t, t, prompt)
    eps_hat = cfg_combine(eps_cond, eps_uncond, cfg_scale)
    return float(schedule.weight(t)) * (eps_hat - eps)


def frozen_sds_gradient(x: np.ndarray, t: float, frozen: FrozenNoise,
                        predict, prompt: str, cfg_scale: float,
                        schedule: DiffusionSchedule = DEFAULT_SCHEDULE) -> np.ndarray:
    """sds_gradient with the run-fixed noise; deterministic in (x, t, seed)."""
    eps = frozen.noise_for(x.shape)
    return sds_gradient(x, t, eps, predict, prompt, cfg_scale, schedule)


def multiview_prompt(prompt_base: str) -> str:
    if not prompt_base:
        raise ValueError("prompt base must be nonempty")
    return MULTIVIEW_TEMPLATE.format(base=prompt_base)


def compose_grid(unobserved_map: torch.Tensor,
                 visible_maps: Sequence[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """2x2 tiling: active (unobserved) quadrant top-left, visible maps in
    buffer order; visible quadrants are detached so no gradient can reach
    them.  Returns (grid (2H, 2W, C), active mask (2H, 2W))."""
    if len(visible_maps) != 3:
        raise ValueError(f"expected exactly 3 visible maps, got {len(visible_maps)}")
    shape = unobserved_map.shape
    for m in visible_maps:
        if m.shape != shape:
            raise ValueError(f"grid tiles must share resolution, {m.shape} vs {shape}")
    v = [m.detach() for m in visible_maps]
    top = torch.cat([unobserved_map, v[0]], dim=1)
    bottom = torch.cat([v[1], v[2]], dim=1)
    grid = torch.cat([top, bottom], dim=0)
    h, w = shape[0], shape[1]
    mask = torch.zeros(2 * h, 2 * w, dtype=unobserved_map.dtype)
    mask[:h, :w] = 1.0
    return grid, mask


def resize_image(image: torch.Tensor, size: int) -> torch.Tensor:
    """Differentiable bilinear resize of an (H, W, C) tensor to (size, size, C)."""
    x = image.permute(2, 0, 1).unsqueeze(0)
    y = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    return y.squeeze(0).permute(1, 2, 0)


@dataclass
class GuidanceContext:
    """Everything a guidance call needs besides the rendered node."""

    oracle: "object"                      # GuidanceOracle
    prompt_base: str
    cfg_scale: float = 100.0
    schedule: DiffusionSchedule = dataclass_field(default_factory=lambda: DEFAULT_SCHEDULE)
    frozen: FrozenNoise | None = None
    oracle_resolution: int = ORACLE_RESOLUTION


@dataclass
class GuidanceRecord:
    mode: str
    timestep: float
    gradient_norm: float
    injection: SdsInjection


def apply_guidance(node: torch.Tensor, mode: str, ctx: GuidanceContext, t: float,
                   noise_seed: int, weight: float,
                   visible_maps: Sequence[torch.Tensor] | None = None) -> GuidanceRecord:
    """Resize the rendered node to the oracle resolution, fetch the guidance
    gradient, and return it as an injection anchored at the resized tensor so
    backprop scatters it through the resize (and the grid slice in multi-view
    mode) onto the render.
    """
    prompt = ctx.prompt_base
    if mode == MODE_MULTIVIEW:
        grid, _ = compose_grid(node, list(visible_maps))
        node = grid
        prompt = multiview_prompt(ctx.prompt_base)
    resized = resize_image(node, ctx.oracle_resolution)
    grid_info = {"rows": 2, "cols": 2, "active": 0} if mode == MODE_MULTIVIEW else None
    grad = ctx.oracle.gradient_for(
        image=resized.detach().double().numpy(),
        timestep=t,
        prompt=prompt,
        cfg_scale=ctx.cfg_scale,
        noise_seed=noise_seed,
        grid=grid_info,
    )
    grad_t = torch.from_numpy(np.ascontiguousarray(grad)).to(resized.dtype)
    injection = SdsInjection(node=resized, gradient=grad_t, weight=weight, label=mode)
    return GuidanceRecord(mode=mode, timestep=t,
                          gradient_norm=float(np.linalg.norm(grad)), injection=injection)
