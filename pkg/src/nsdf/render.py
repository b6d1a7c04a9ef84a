"""Volumetric rendering over the signed distance field.

The per-sample opacity is the unbiased SDF-based construction
``alpha_i = max((sigmoid(s*f_i) - sigmoid(s*f_{i+1})) / sigmoid(s*f_i), 0)``
with transmittance-weighted accumulation.  A pixel color is the weighted sum
of radiance samples plus background compositing; the normal channel is the
weighted sum of raw SDF gradients (not renormalized); opacity is the weight
sum.  Sampling is stratified with one importance-resampling round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import torch
from torch import nn

from .cameras import RayBundle


class SScale(nn.Module):
    """Learnable sharpness of the SDF-to-opacity mapping; stored as log(s) so s > 0."""

    def __init__(self, initial: float = 20.0, dtype: torch.dtype = torch.float64):
        super().__init__()
        if initial <= 0:
            raise ValueError("s must be positive")
        self.log_s = nn.Parameter(torch.tensor(math.log(initial), dtype=dtype))

    @property
    def s(self) -> torch.Tensor:
        return torch.exp(self.log_s)


@dataclass
class SamplingSpec:
    n_coarse: int = 64
    n_importance: int = 64
    perturb: bool = True
    bound_radius: float = 1.0
    bg_color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    chunk: int = 4096


@dataclass
class RenderOutput:
    color: torch.Tensor | None      # (N, 3)
    normal: torch.Tensor | None     # (N, 3) raw weighted gradient sum
    opacity: torch.Tensor           # (N,)
    weights: torch.Tensor           # (N, S-1) per-sample contributions
    depths: torch.Tensor            # (N, S) sample depths (detached)


def neus_weights(sdf_values: torch.Tensor, deltas: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """Quadrature weights from SDF samples along rays.

    sdf_values: (..., S) ordered by increasing depth; deltas: (..., S-1)
    positive segment lengths (used for the ordering precondition only).
    Returns weights (..., S-1) with W_i >= 0 and sum W <= 1.
    """
    if sdf_values.shape[-1] != deltas.shape[-1] + 1:
        raise ValueError("expected one more sdf sample than segments")
    if torch.any(deltas <= 0):
        raise ValueError("samples must be ordered by strictly increasing depth")
    s = torch.as_tensor(s, dtype=sdf_values.dtype)
    cdf = torch.sigmoid(s * sdf_values)
    alpha = ((cdf[..., :-1] - cdf[..., 1:]) / (cdf[..., :-1] + 1e-12)).clamp(0.0, 1.0)
    trans = torch.cumprod(torch.cat([torch.ones_like(alpha[..., :1]), 1.0 - alpha], dim=-1), dim=-1)
    return alpha * trans[..., :-1]


def sample_pdf(bins: torch.Tensor, weights: torch.Tensor, n_samples: int,
               rng: np.random.Generator | None = None) -> torch.Tensor:
    """Inverse-CDF sampling of extra depths; deterministic midpoints when rng is None."""
    weights = weights + 1e-5
    pdf = weights / weights.sum(dim=-1, keepdim=True)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)
    if rng is None:
        u = torch.linspace(0.5 / n_samples, 1.0 - 0.5 / n_samples, n_samples, dtype=cdf.dtype)
        u = u.expand(*cdf.shape[:-1], n_samples).contiguous()
    else:
        u = torch.from_numpy(rng.random((*cdf.shape[:-1], n_samples))).to(cdf.dtype)
    idx = torch.searchsorted(cdf, u, right=True)
    below = (idx - 1).clamp_min(0)
    above = idx.clamp_max(cdf.shape[-1] - 1)
    cdf_lo = torch.gather(cdf, -1, below)
    cdf_hi = torch.gather(cdf, -1, above)
    bins_lo = torch.gather(bins, -1, below.clamp_max(bins.shape[-1] - 1))
    bins_hi = torch.gather(bins, -1, above.clamp_max(bins.shape[-1] - 1))
    denom = torch.where(cdf_hi - cdf_lo < 1e-8, torch.ones_like(cdf_lo), cdf_hi - cdf_lo)
    t = (u - cdf_lo) / denom
    return bins_lo + t * (bins_hi - bins_lo)


def _stratified_depths(near: torch.Tensor, far: torch.Tensor, n: int,
                       rng: np.random.Generator | None) -> torch.Tensor:
    frac = torch.linspace(0.0, 1.0, n + 1, dtype=near.dtype)[:-1]
    if rng is None:
        jitter = torch.full((near.shape[0], n), 0.5, dtype=near.dtype)
    else:
        jitter = torch.from_numpy(rng.random((near.shape[0], n))).to(near.dtype)
    frac = frac.unsqueeze(0) + jitter / n
    return near.unsqueeze(-1) + (far - near).unsqueeze(-1) * frac


def render_rays(sdf_field, radiance_field, s_scale, rays: RayBundle, sampling: SamplingSpec,
                rng: np.random.Generator | None = None, need_color: bool = True,
                need_normal: bool = True, grad_normals: bool = False,
                dtype: torch.dtype = torch.float64) -> RenderOutput:
    """Render a ray bundle; differentiable with respect to all field parameters.

    grad_normals keeps the SDF spatial gradient inside the autograd graph
    (required when the normal channel itself is trained); otherwise gradients
    feed the radiance network as detached features and geometry learns
    through the weights.
    """
    n_rays = len(rays)
    device_dtype = dtype
    bg = torch.tensor(sampling.bg_color, dtype=device_dtype)
    origins = torch.from_numpy(rays.origins).to(device_dtype)
    dirs = torch.from_numpy(rays.dirs).to(device_dtype)
    near = torch.from_numpy(rays.near).to(device_dtype)
    far = torch.from_numpy(rays.far).to(device_dtype)
    live = torch.from_numpy(rays.hits_bound)

    total_s = sampling.n_coarse + sampling.n_importance
    color = torch.zeros(n_rays, 3, dtype=device_dtype) + bg if need_color else None
    normal = torch.zeros(n_rays, 3, dtype=device_dtype) if need_normal else None
    opacity = torch.zeros(n_rays, dtype=device_dtype)
    weights_out = torch.zeros(n_rays, total_s - 1, dtype=device_dtype)
    depths_out = torch.zeros(n_rays, total_s, dtype=device_dtype)
    if not bool(live.any()):
        return RenderOutput(color=color, normal=normal, opacity=opacity,
                            weights=weights_out, depths=depths_out)

    idx = torch.nonzero(live, as_tuple=False).squeeze(-1)
    o, d = origins[idx], dirs[idx]
    nr, fr = near[idx], far[idx]

    depths = _stratified_depths(nr, fr, sampling.n_coarse, rng if sampling.perturb else None)
    if sampling.n_importance > 0:
        with torch.no_grad():
            pts = o.unsqueeze(1) + depths.unsqueeze(-1) * d.unsqueeze(1)
            sdf_coarse = sdf_field.sdf(pts.reshape(-1, 3)).reshape(depths.shape)
            w_coarse = neus_weights(sdf_coarse, depths.diff(dim=-1).clamp_min(1e-12),
                                    s_scale.s.detach() if isinstance(s_scale, SScale) else s_scale)
            extra = sample_pdf(depths, w_coarse, sampling.n_importance, rng)
        depths = torch.sort(torch.cat([depths, extra], dim=-1), dim=-1).values
    depths = depths.detach()

    pts = o.unsqueeze(1) + depths.unsqueeze(-1) * d.unsqueeze(1)       # (n, S, 3)
    flat = pts.reshape(-1, 3)
    s_val = s_scale.s if isinstance(s_scale, SScale) else torch.as_tensor(s_scale, dtype=device_dtype)

    if need_normal or (need_color and radiance_field is not None):
        if grad_normals:
            sdf, feat, grads = sdf_field.with_gradient(flat)
        elif hasattr(sdf_field, "with_detached_gradient"):
            sdf, feat, grads = sdf_field.with_detached_gradient(flat)
        else:
            with torch.no_grad():
                _, _, grads = sdf_field.with_gradient(flat)
            sdf, feat = sdf_field(flat)
    else:
        sdf, feat = sdf_field(flat)
        grads = None

    S = depths.shape[-1]
    sdf = sdf.reshape(-1, S)
    deltas = depths.diff(dim=-1).clamp_min(1e-12)
    w = neus_weights(sdf, deltas, s_val)                                # (n, S-1)

    alpha_sum = w.sum(dim=-1)
    if need_color:
        view = d.unsqueeze(1).expand_as(pts).reshape(-1, 3)
        rgb = radiance_field(flat, view, grads, feat).reshape(-1, S, 3)
        c = (w.unsqueeze(-1) * rgb[:, :-1, :]).sum(dim=1)
        c = c + (1.0 - alpha_sum).unsqueeze(-1) * bg
        color = color.clone()
        color[idx] = c
    if need_normal:
        g = grads.reshape(-1, S, 3)
        nrm = (w.unsqueeze(-1) * g[:, :-1, :]).sum(dim=1)
        normal = normal.clone()
        normal[idx] = nrm
    opacity = opacity.clone()
    opacity[idx] = alpha_sum
    weights_out[idx] = w.detach()
    depths_out[idx] = depths
    return RenderOutput(color=color, normal=normal, opacity=opacity,
                        weights=weights_out, depths=depths_out)


def render_image(sdf_field, radiance_field, s_scale, camera, sampling: SamplingSpec,
                 rng: np.random.Generator | None = None, need_color: bool = True,
                 need_normal: bool = True, grad_normals: bool = False,
                 dtype: torch.dtype = torch.float64):
    """Render the full camera image; returns dict of (H, W, ...) tensors."""
    from .cameras import all_pixels, generate_rays

    pixels = all_pixels(camera)
    outs = {"color": [], "normal": [], "opacity": []}
    for lo in range(0, len(pixels), sampling.chunk):
        rays = generate_rays(camera, pixels[lo:lo + sampling.chunk], sampling.bound_radius)
        out = render_rays(sdf_field, radiance_field, s_scale, rays, sampling, rng=rng,
                          need_color=need_color, need_normal=need_normal,
                          grad_normals=grad_normals, dtype=dtype)
        if need_color:
            outs["color"].append(out.color)
        if need_normal:
            outs["normal"].append(out.normal)
        outs["opacity"].append(out.opacity)
    H, W = camera.height, camera.width
    result = {"opacity": torch.cat(outs["opacity"]).reshape(H, W)}
    if need_color:
        result["color"] = torch.cat(outs["color"]).reshape(H, W, 3)
    if need_normal:
        result["normal"] = torch.cat(outs["normal"]).reshape(H, W, 3)
    return result


def rotate_normals(normal_map: torch.Tensor, R: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Apply a proper rotation to every normal; rejects non-rotations."""
    R = torch.as_tensor(R, dtype=normal_map.dtype)
    if R.shape != (3, 3):
        raise ValueError("R must be 3x3")
    eye = torch.eye(3, dtype=R.dtype)
    if not torch.allclose(R @ R.T, eye, atol=1e-6) or abs(float(torch.det(R)) - 1.0) > 1e-6:
        raise ValueError("R is not a proper rotation")
    return normal_map @ R.T


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (QR of a Gaussian matrix, sign-fixed)."""
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def normals_to_rgb(normal_map: torch.Tensor) -> torch.Tensor:
    """Map components from [-1, 1] to RGB in [0, 1]; zero normals map to mid-gray."""
    return ((normal_map + 1.0) * 0.5).clamp(0.0, 1.0)


def rgb_to_normals(rgb: torch.Tensor) -> torch.Tensor:
    return rgb * 2.0 - 1.0
