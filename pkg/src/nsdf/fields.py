"""Neural SDF and radiance fields.

The geometry network maps a 3D point to a signed distance plus a feature
vector; the appearance network maps (point, view direction, surface normal,
feature) to RGB in [0, 1].  Spatial gradients of the SDF are taken
analytically through autograd with ``create_graph=True`` so they stay inside
the optimization graph (the Eikonal term and the normal-map renderer both
differentiate them with respect to the parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

SOFTPLUS_BETA = 100.0


def positional_encode(x: torch.Tensor, levels: int) -> torch.Tensor:
    """Lift points/directions to [x, sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)].

    Output width is ``input_dim * (1 + 2 * levels)``.
    """
    if levels < 0:
        raise ValueError(f"levels must be >= 0, got {levels}")
    if levels == 0:
        return x
    parts = [x]
    for k in range(levels):
        ang = (2.0**k) * x
        parts.append(torch.sin(ang))
        parts.append(torch.cos(ang))
    return torch.cat(parts, dim=-1)


@dataclass
class SdfSpec:
    """Architecture of the geometry network."""

    hidden: Sequence[int] = (64, 64, 64, 64)
    feature_dim: int = 16
    encoding_levels: int = 6
    skip_layers: frozenset[int] = dataclass_field(default_factory=frozenset)

    @staticmethod
    def paper_preset() -> "SdfSpec":
        # NeuS-sized networks; not the test default.
        return SdfSpec(hidden=(256,) * 8, feature_dim=256, skip_layers=frozenset({4}))


@dataclass
class RadianceSpec:
    """Architecture of the appearance network."""

    hidden: Sequence[int] = (64, 64, 64)
    feature_dim: int = 16
    dir_encoding_levels: int = 4

    @staticmethod
    def paper_preset() -> "RadianceSpec":
        return RadianceSpec(hidden=(256,) * 4, feature_dim=256)


def _rng_normal(rng: np.random.Generator, shape, mean=0.0, std=1.0) -> torch.Tensor:
    return torch.from_numpy(rng.normal(mean, std, size=shape))


class SdfField(nn.Module):
    """MLP signed-distance field f: R^3 -> (sdf, feature).

    Softplus(beta=100) activations; optional skip connections re-inject the
    encoded input.  Initialization is deterministic given the supplied RNG.
    """

    def __init__(self, spec: SdfSpec | None = None, rng: np.random.Generator | None = None,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.spec = spec or SdfSpec()
        rng = rng if rng is not None else np.random.default_rng(0)
        enc_dim = 3 * (1 + 2 * self.spec.encoding_levels)
        self.enc_dim = enc_dim
        dims = [enc_dim] + list(self.spec.hidden) + [1 + self.spec.feature_dim]
        self.layers = nn.ModuleList()
        for i in range(len(dims) - 1):
            in_dim = dims[i] + (enc_dim if i in self.spec.skip_layers else 0)
            lin = nn.Linear(in_dim, dims[i + 1])
            with torch.no_grad():
                lin.weight.copy_(_rng_normal(rng, lin.weight.shape, 0.0, math.sqrt(2.0 / dims[i + 1])))
                lin.bias.zero_()
            self.layers.append(lin)
        self.to(dtype)

    @property
    def layer_spec(self) -> list[int]:
        return list(self.spec.hidden)

    def forward(self, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Evaluate at points p (N, 3) -> (sdf (N,), feature (N, F))."""
        enc = positional_encode(p, self.spec.encoding_levels)
        h = enc
        for i, lin in enumerate(self.layers):
            if i in self.spec.skip_layers:
                h = torch.cat([h, enc], dim=-1)
            h = lin(h)
            if i < len(self.layers) - 1:
                h = F.softplus(h, beta=SOFTPLUS_BETA)
        return h[..., 0], h[..., 1:]

    def sdf(self, p: torch.Tensor) -> torch.Tensor:
        return self.forward(p)[0]

    def with_gradient(self, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Evaluate sdf, feature and the analytic spatial gradient at p.

        The gradient is produced with ``create_graph`` when grad mode is on,
        so it participates in parameter gradients (double backprop).
        """
        keep_graph = torch.is_grad_enabled()
        with torch.enable_grad():
            q = p if p.requires_grad else p.detach().requires_grad_(True)
            sdf, feat = self.forward(q)
            (grad,) = torch.autograd.grad(sdf.sum(), q, create_graph=keep_graph)
        if not keep_graph:
            sdf, feat, grad = sdf.detach(), feat.detach(), grad.detach()
        return sdf, feat, grad

    def spatial_gradient(self, p: torch.Tensor) -> torch.Tensor:
        return self.with_gradient(p)[2]

    def with_detached_gradient(self, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Like with_gradient but the spatial gradient leaves the graph; one
        forward pass serves both the outputs and the gradient."""
        if not torch.is_grad_enabled():
            return self.with_gradient(p)
        q = p.detach().requires_grad_(True)
        sdf, feat = self.forward(q)
        (grad,) = torch.autograd.grad(sdf.sum(), q, create_graph=False, retain_graph=True)
        return sdf, feat, grad.detach()

    def sdf_grid(self, points: np.ndarray, chunk: int = 65536) -> np.ndarray:
        """Chunked no-grad SDF evaluation for dense grids; returns float64 values."""
        dtype = self.layers[0].weight.dtype
        out = np.empty(points.shape[0], dtype=np.float64)
        with torch.no_grad():
            for lo in range(0, points.shape[0], chunk):
                p = torch.from_numpy(points[lo:lo + chunk]).to(dtype)
                out[lo:lo + chunk] = self.sdf(p).double().numpy()
        return out


def init_geometric(field: SdfField, radius: float, rng: np.random.Generator | None = None,
                   fit_steps: int = 200) -> SdfField:
    """Re-initialize the SDF network so that f(p) is approximately |p| - radius.

    Standard geometric initialization for softplus MLPs (hidden weights
    N(0, sqrt(2/out)), encoded-input and skip columns zeroed, final sdf row
    N(sqrt(pi/in), 1e-4) with bias -radius), followed by a radial calibration
    that rescales the final row so the measured zero crossing and slope match
    the requested sphere; the raw scheme undershoots on narrow networks.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    rng = rng if rng is not None else np.random.default_rng(0)
    enc_dim = field.enc_dim
    n_layers = len(field.layers)
    with torch.no_grad():
        for i, lin in enumerate(field.layers):
            out_dim = lin.out_features
            if i == n_layers - 1:
                w = _rng_normal(rng, lin.weight.shape, 0.0, math.sqrt(2.0 / out_dim))
                w[0] = _rng_normal(rng, (lin.in_features,), math.sqrt(math.pi / lin.in_features), 1e-4)
                lin.weight.copy_(w)
                lin.bias.zero_()
                lin.bias[0] = -radius
            else:
                lin.weight.copy_(_rng_normal(rng, lin.weight.shape, 0.0, math.sqrt(2.0 / out_dim)))
                lin.bias.zero_()
                if i == 0:
                    lin.weight[:, 3:] = 0.0  # encoded features start silent
                elif i in field.spec.skip_layers:
                    lin.weight[:, -enc_dim:] = 0.0

        dirs = rng.normal(size=(512, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dtype = field.layers[0].weight.dtype
        last = field.layers[-1]

        def mean_at(scale: float) -> float:
            p = torch.from_numpy(scale * dirs).to(dtype)
            return float(field.sdf(p).mean())

        slope = (mean_at(1.5 * radius) - mean_at(0.5 * radius)) / radius
        if slope > 1e-6:
            last.weight[0] /= slope
            last.bias[0] /= slope
        last.bias[0] -= mean_at(radius)

    # narrow networks keep a direction-dependent wobble after the scheme init;
    # a short fit against the exact sphere distance pins the level set down
    opt = torch.optim.Adam(field.parameters(), lr=2e-3)
    for _ in range(fit_steps):
        d = rng.normal(size=(1024, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = rng.random(1024) * 2.5 * radius  # uniform in radius: keeps the center constrained
        p = torch.from_numpy(d * r[:, None]).to(field.layers[0].weight.dtype)
        target = torch.from_numpy(r - radius).to(p.dtype)
        loss = ((field.sdf(p) - target) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    return field


class RadianceField(nn.Module):
    """MLP radiance field c(p, v, n, feature) -> RGB in [0, 1] (sigmoid output)."""

    def __init__(self, spec: RadianceSpec | None = None, rng: np.random.Generator | None = None,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.spec = spec or RadianceSpec()
        rng = rng if rng is not None else np.random.default_rng(0)
        in_dim = 3 + 3 * (1 + 2 * self.spec.dir_encoding_levels) + 3 + self.spec.feature_dim
        dims = [in_dim] + list(self.spec.hidden) + [3]
        self.layers = nn.ModuleList()
        for i in range(len(dims) - 1):
            lin = nn.Linear(dims[i], dims[i + 1])
            with torch.no_grad():
                lin.weight.copy_(_rng_normal(rng, lin.weight.shape, 0.0, math.sqrt(2.0 / dims[i + 1])))
                lin.bias.zero_()
            self.layers.append(lin)
        self.to(dtype)

    def forward(self, p: torch.Tensor, v: torch.Tensor, n: torch.Tensor,
                feat: torch.Tensor) -> torch.Tensor:
        h = torch.cat([p, positional_encode(v, self.spec.dir_encoding_levels), n, feat], dim=-1)
        for i, lin in enumerate(self.layers):
            h = lin(h)
            if i < len(self.layers) - 1:
                h = F.relu(h)
        return torch.sigmoid(h)


class AnalyticSdf:
    """Closed-form SDF wrapper exposing the SdfField evaluation interface.

    Used by the scene synthesizer and by quadrature-oracle tests; carries no
    parameters.  ``grad_fn`` must be the exact spatial gradient of ``fn``.
    """

    def __init__(self, fn: Callable[[torch.Tensor], torch.Tensor],
                 grad_fn: Callable[[torch.Tensor], torch.Tensor], feature_dim: int = 0):
        self.fn = fn
        self.grad_fn = grad_fn
        self.feature_dim = feature_dim

    def forward(self, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        sdf = self.fn(p)
        feat = torch.zeros(p.shape[:-1] + (self.feature_dim,), dtype=p.dtype)
        return sdf, feat

    __call__ = forward

    def sdf(self, p: torch.Tensor) -> torch.Tensor:
        return self.fn(p)

    def with_gradient(self, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        sdf, feat = self.forward(p)
        return sdf, feat, self.grad_fn(p)

    with_detached_gradient = with_gradient

    def spatial_gradient(self, p: torch.Tensor) -> torch.Tensor:
        return self.grad_fn(p)

    def sdf_grid(self, points: np.ndarray, chunk: int = 262144) -> np.ndarray:
        return self.fn(torch.from_numpy(points).double()).numpy()

    @staticmethod
    def sphere(radius: float, center=(0.0, 0.0, 0.0)) -> "AnalyticSdf":
        c = torch.tensor(center, dtype=torch.float64)

        def fn(p):
            return torch.linalg.norm(p - c.to(p.dtype), dim=-1) - radius

        def grad(p):
            d = p - c.to(p.dtype)
            return d / torch.linalg.norm(d, dim=-1, keepdim=True).clamp_min(1e-12)

        return AnalyticSdf(fn, grad)

    @staticmethod
    def plane(normal=(0.0, 0.0, 1.0), offset: float = 0.0) -> "AnalyticSdf":
        n = torch.tensor(normal, dtype=torch.float64)
        n = n / torch.linalg.norm(n)

        def fn(p):
            return (p * n.to(p.dtype)).sum(dim=-1) - offset

        def grad(p):
            return n.to(p.dtype).expand_as(p).clone()

        return AnalyticSdf(fn, grad)

    @staticmethod
    def torus(major: float, minor: float) -> "AnalyticSdf":
        def fn(p):
            q = torch.stack([torch.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2) - major, p[..., 2]], dim=-1)
            return torch.linalg.norm(q, dim=-1) - minor

        def grad(p):
            rho = torch.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2).clamp_min(1e-12)
            qx = rho - major
            qn = torch.sqrt(qx**2 + p[..., 2] ** 2).clamp_min(1e-12)
            gx = qx / qn * (p[..., 0] / rho)
            gy = qx / qn * (p[..., 1] / rho)
            gz = p[..., 2] / qn
            return torch.stack([gx, gy, gz], dim=-1)

        return AnalyticSdf(fn, grad)

    @staticmethod
    def box(half_extents=(0.4, 0.3, 0.5)) -> "AnalyticSdf":
        b = torch.tensor(half_extents, dtype=torch.float64)

        def fn(p):
            q = p.abs() - b.to(p.dtype)
            outside = torch.linalg.norm(q.clamp_min(0.0), dim=-1)
            inside = q.max(dim=-1).values.clamp_max(0.0)
            return outside + inside

        def grad(p):
            # numerically robust central differences of the exact fn; the box
            # SDF gradient is piecewise and only needed away from edges
            h = 1e-6
            cols = []
            for a in range(3):
                e = torch.zeros_like(p)
                e[..., a] = h
                cols.append((fn(p + e) - fn(p - e)) / (2 * h))
            g = torch.stack(cols, dim=-1)
            return g / torch.linalg.norm(g, dim=-1, keepdim=True).clamp_min(1e-12)

        return AnalyticSdf(fn, grad)

    @staticmethod
    def union(a: "AnalyticSdf", b: "AnalyticSdf") -> "AnalyticSdf":
        def fn(p):
            return torch.minimum(a.fn(p), b.fn(p))

        def grad(p):
            fa, fb = a.fn(p), b.fn(p)
            ga, gb = a.grad_fn(p), b.grad_fn(p)
            return torch.where((fa <= fb).unsqueeze(-1), ga, gb)

        return AnalyticSdf(fn, grad)


def parameter_vector(*modules: nn.Module) -> torch.Tensor:
    """Flatten parameters of the given modules into one vector (fixed order)."""
    return torch.cat([p.detach().reshape(-1) for m in modules for p in m.parameters()])


def load_parameter_vector(vec: torch.Tensor, *modules: nn.Module) -> None:
    total = sum(p.numel() for m in modules for p in m.parameters())
    if vec.numel() != total:
        raise ValueError(f"parameter vector length {vec.numel()} does not match modules ({total})")
    offset = 0
    with torch.no_grad():
        for m in modules:
            for p in m.parameters():
                n = p.numel()
                p.copy_(vec[offset:offset + n].reshape(p.shape))
                offset += n
