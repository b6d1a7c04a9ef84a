"""Reconstruction losses and the combined training objective.

The scalar objective is L_c + beta*L_m + lambda*L_eik.  Diffusion-guidance
terms never contribute a scalar: each one is a prescribed pixel-space
gradient injected at a rendered-image node, entering backprop as
weight * sum(g . x) with g detached, which yields weight * g^T dx/dtheta.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import torch

MASK_EPS = 1e-5


class NonFiniteLoss(RuntimeError):
    """Raised when a loss term goes NaN/inf; carries the offending term name."""


@dataclass
class LossWeights:
    beta: float = 0.1        # mask term
    lam: float = 0.1         # Eikonal term
    gamma: float = 1e-5      # color-guidance gradient
    gamma_n: float = 1e-5    # normal-guidance gradient

    def __post_init__(self):
        for name in ("beta", "lam", "gamma", "gamma_n"):
            v = getattr(self, name)
            if not (v >= 0) or v != v or v == float("inf"):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


def photometric_loss(rendered: torch.Tensor, observed: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the L1 norm of the RGB difference."""
    if rendered.shape != observed.shape:
        raise ValueError(f"shape mismatch {rendered.shape} vs {observed.shape}")
    if rendered.numel() == 0:
        raise ValueError("photometric loss needs at least one ray")
    return (rendered - observed).abs().sum(dim=-1).mean()


def mask_loss(opacity: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy between rendered opacity and the object mask."""
    if opacity.shape != mask.shape:
        raise ValueError(f"shape mismatch {opacity.shape} vs {mask.shape}")
    a = opacity.clamp(MASK_EPS, 1.0 - MASK_EPS)
    return -(mask * torch.log(a) + (1.0 - mask) * torch.log(1.0 - a)).mean()


def eikonal_loss(field, points: torch.Tensor) -> torch.Tensor:
    """Mean squared deviation of |grad f| from 1 over the sample points."""
    if points.numel() == 0:
        raise ValueError("eikonal loss needs at least one point")
    grad = field.spatial_gradient(points)
    return ((torch.linalg.norm(grad, dim=-1) - 1.0) ** 2).mean()


@dataclass
class SdsInjection:
    """A prescribed image-space gradient attached to a rendered node."""

    node: torch.Tensor        # rendered image, inside the autograd graph
    gradient: torch.Tensor    # same shape, detached
    weight: float
    label: str = "sds"

    def backward_term(self) -> torch.Tensor:
        return self.weight * (self.gradient.detach() * self.node).sum()


@dataclass
class LossParts:
    color: torch.Tensor | None = None
    mask: torch.Tensor | None = None
    eikonal: torch.Tensor | None = None


@dataclass
class TotalLoss:
    value: float                       # scalar NeuS objective (no SDS share)
    backward_tensor: torch.Tensor      # value + injection terms, for .backward()
    terms: dict = dataclass_field(default_factory=dict)


def total_loss(parts: LossParts, weights: LossWeights,
               injections: list[SdsInjection] | None = None) -> TotalLoss:
    import math

    injections = injections or []
    terms: dict[str, float] = {}
    scalar = None

    def accumulate(term, w, name):
        nonlocal scalar
        if term is None:
            terms[name] = 0.0
            return
        val = float(term.detach())
        if not math.isfinite(val):
            raise NonFiniteLoss(f"loss term {name!r} is not finite: {val}")
        terms[name] = w * val
        if w != 0.0:
            scalar = w * term if scalar is None else scalar + w * term

    accumulate(parts.color, 1.0, "color")
    accumulate(parts.mask, weights.beta, "mask")
    accumulate(parts.eikonal, weights.lam, "eikonal")
    if scalar is None:
        ref = injections[0].node if injections else torch.zeros(())
        scalar = torch.zeros((), dtype=ref.dtype)
    backward = scalar
    for inj in injections:
        if inj.weight == 0.0:
            continue
        if not torch.isfinite(inj.gradient).all():
            raise NonFiniteLoss(f"injected gradient {inj.label!r} is not finite")
        backward = backward + inj.backward_term()
    return TotalLoss(value=float(scalar.detach()), backward_tensor=backward, terms=terms)


def eikonal_sample_points(rng, n: int, bound_radius: float,
                          ray_points: torch.Tensor | None = None,
                          dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Half uniform in the bounding sphere, half perturbed render samples."""
    import numpy as np

    n_uniform = n if ray_points is None or ray_points.numel() == 0 else n - n // 2
    d = rng.normal(size=(n_uniform, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.random(n_uniform) ** (1.0 / 3.0) * bound_radius
    pts = [torch.from_numpy(d * r[:, None]).to(dtype)]
    if ray_points is not None and ray_points.numel() > 0:
        k = n // 2
        flat = ray_points.detach().reshape(-1, 3)
        sel = rng.integers(0, flat.shape[0], size=k)
        jitter = torch.from_numpy(rng.normal(scale=0.01, size=(k, 3))).to(dtype)
        pts.append(flat[sel].to(dtype) + jitter)
    return torch.cat(pts, dim=0)
