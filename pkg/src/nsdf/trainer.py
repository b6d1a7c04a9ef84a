"""Training loop: per-iteration viewpoint sampling over the combined
visible/unobserved set, reconstruction losses on visible views, guidance
gradients on unobserved views with single-/multi-view alternation and a
color-guidance step every 4th time, a 3-slot buffer of visible normal maps,
a hand-stepped Adam, and deterministic checkpointing.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import deque
from dataclasses import dataclass, field as dataclass_field, fields as dataclass_fields
from pathlib import Path

import numpy as np
import torch

from .cameras import Camera, generate_rays
from .checkpoint import load_fields, save_fields
from .fields import RadianceField, RadianceSpec, SdfField, SdfSpec, init_geometric, \
    load_parameter_vector, parameter_vector
from .losses import LossParts, LossWeights, NonFiniteLoss, SdsInjection, eikonal_loss, \
    eikonal_sample_points, mask_loss, photometric_loss, total_loss
from .render import SamplingSpec, SScale, normals_to_rgb, random_rotation, render_image, \
    render_rays, rotate_normals
from .scene import Scene
from .sds import (
    MODE_COLOR,
    MODE_MULTIVIEW,
    MODE_SINGLE,
    FrozenNoise,
    GuidanceContext,
    OracleUnavailable,
    RemoteGuidanceOracle,
    ToyGaussianOracle,
    apply_guidance,
    sample_timestep,
)

log = logging.getLogger(__name__)

GUIDANCE_URL_ENV = "NSDF_GUIDANCE_URL"

VISIBLE = "visible"
UNOBSERVED = "unobserved"

ABLATIONS = ("neus", "neus-sds", "+normals", "+frozen", "+multiview")


class TrainingAborted(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    iterations: int = 300000
    seed: int = 0
    dtype: str = "float32"

    # networks
    sdf_hidden: tuple = (64, 64, 64, 64)
    sdf_feature_dim: int = 16
    sdf_encoding_levels: int = 6
    sdf_skip_layers: tuple = ()
    rad_hidden: tuple = (64, 64, 64)
    rad_dir_levels: int = 4
    s_init: float = 20.0
    init_radius: float = 0.5
    init_fit_steps: int = 200

    # rendering
    ray_batch: int = 512
    n_coarse: int = 64
    n_importance: int = 64
    sds_render_res: int = 64
    bound_radius: float = 1.0
    bg_color: tuple = (1.0, 1.0, 1.0)

    # losses
    beta: float = 0.1
    lam: float = 0.1
    gamma: float = 1e-5
    gamma_n: float = 1e-5
    eikonal_points: int = 512

    # guidance
    use_sds: bool = True
    use_normals: bool = True
    use_frozen: bool = True
    use_multiview: bool = True
    t_min: float = 0.0
    t_max: float = 0.5
    cfg_scale: float = 100.0
    oracle_resolution: int = 512
    toy_oracle_mean: float = 0.5
    toy_oracle_cov: float = 0.25

    # optimizer
    lr: float = 5e-4
    warmup: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    # bookkeeping
    checkpoint_every: int = 10000
    threads: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        for name in ("sdf_hidden", "sdf_skip_layers", "rad_hidden", "bg_color"):
            setattr(self, name, tuple(getattr(self, name)))

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    @staticmethod
    def toy(**overrides) -> "TrainConfig":
        """Desk-scale preset used by the synthetic-scene tests."""
        base = dict(iterations=2000, ray_batch=256, n_coarse=16, n_importance=16,
                    sds_render_res=20, eikonal_points=128, oracle_resolution=128,
                    lr=2e-3, warmup=100, s_init=30.0, init_radius=0.5,
                    checkpoint_every=1000, dtype="float32")
        base.update(overrides)
        return TrainConfig(**base)

    @staticmethod
    def paper(**overrides) -> "TrainConfig":
        """Full-scale preset mirroring the inherited reconstruction defaults."""
        base = dict(iterations=300000, sdf_hidden=(256,) * 8, sdf_feature_dim=256,
                    sdf_skip_layers=(4,), rad_hidden=(256,) * 4, sds_render_res=64,
                    ray_batch=512, n_coarse=64, n_importance=64, lr=5e-4, dtype="float32")
        base.update(overrides)
        return TrainConfig(**base)

    def with_ablation(self, ablation: str) -> "TrainConfig":
        if ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
        cfg = TrainConfig(**{f.name: getattr(self, f.name) for f in dataclass_fields(self)})
        cfg.use_sds = ablation != "neus"
        cfg.use_normals = ablation in ("+normals", "+frozen", "+multiview")
        cfg.use_frozen = ablation in ("+frozen", "+multiview")
        cfg.use_multiview = ablation == "+multiview"
        return cfg


@dataclass
class ViewSet:
    visible: list          # list[ViewRecord] with images + masks
    unobserved: list       # list[ViewRecord], cameras only

    def __post_init__(self):
        if not self.visible:
            raise ValueError("ViewSet needs at least one visible view")

    @property
    def size(self) -> int:
        return len(self.visible) + len(self.unobserved)


def pick_viewpoint(rng: np.random.Generator, views: ViewSet) -> tuple[int, str]:
    """Uniform draw over the concatenated visible+unobserved view list."""
    i = int(rng.integers(0, views.size))
    if i < len(views.visible):
        return i, VISIBLE
    return i - len(views.visible), UNOBSERVED


class NormalBuffer:
    """FIFO ring of the last 3 detached visible-view normal maps."""

    CAPACITY = 3

    def __init__(self):
        self._buf: deque = deque(maxlen=self.CAPACITY)

    def push(self, normal_map: torch.Tensor, view_id: int) -> None:
        if normal_map.requires_grad:
            raise ValueError("NormalBuffer entries must be detached")
        self._buf.append((normal_map, view_id))

    def __len__(self) -> int:
        return len(self._buf)

    def maps(self) -> list[torch.Tensor]:
        return [m for m, _ in self._buf]


def sds_mode_scheduler(k: int, use_normals: bool, use_multiview: bool) -> str:
    """Deterministic guidance mode for the k-th SDS iteration.

    Every 4th SDS iteration runs color guidance; the rest alternate
    single-view / multi-view normal guidance (single only, when multi-view is
    off; color only, when normal guidance is off).
    """
    if not use_normals:
        return MODE_COLOR
    if k % 4 == 3:
        return MODE_COLOR
    j = k - k // 4  # index among non-color iterations
    if use_multiview and j % 2 == 1:
        return MODE_MULTIVIEW
    return MODE_SINGLE


@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    step: int = 0


def adam_step(params: torch.Tensor, grads: torch.Tensor, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> torch.Tensor:
    """One bias-corrected Adam update on a flat parameter vector."""
    if params.shape != grads.shape:
        raise ValueError("params/grads shape mismatch")
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return params - lr * m_hat / (torch.sqrt(v_hat) + eps)


def lr_schedule(iteration: int, base_lr: float, warmup: int, total: int) -> float:
    """Linear warmup then cosine decay to zero."""
    if warmup > 0 and iteration < warmup:
        return base_lr * (iteration + 1) / warmup
    if total <= warmup:
        return base_lr
    progress = (iteration - warmup) / max(1, total - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


CSV_COLUMNS = ("iteration", "kind", "mode", "loss_color", "loss_mask", "loss_eikonal",
               "grad_sds", "grad_sds_normal", "total")


class Trainer:
    def __init__(self, scene: Scene, config: TrainConfig, oracle=None, out_dir=None):
        self.scene = scene
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if config.threads > 0:
            torch.set_num_threads(config.threads)
        dtype = config.torch_dtype

        seeds = np.random.SeedSequence(config.seed).spawn(5)
        self.rng_init = np.random.default_rng(seeds[0])
        self.rng_view = np.random.default_rng(seeds[1])
        self.rng_pixels = np.random.default_rng(seeds[2])
        self.rng_train = np.random.default_rng(seeds[3])
        self.rng_sds = np.random.default_rng(seeds[4])

        sdf_spec = SdfSpec(hidden=config.sdf_hidden, feature_dim=config.sdf_feature_dim,
                           encoding_levels=config.sdf_encoding_levels,
                           skip_layers=frozenset(config.sdf_skip_layers))
        rad_spec = RadianceSpec(hidden=config.rad_hidden, feature_dim=config.sdf_feature_dim,
                                dir_encoding_levels=config.rad_dir_levels)
        self.sdf = SdfField(sdf_spec, rng=self.rng_init, dtype=torch.float64)
        init_geometric(self.sdf, config.init_radius, rng=self.rng_init,
                       fit_steps=config.init_fit_steps)
        self.sdf.to(dtype)
        self.radiance = RadianceField(rad_spec, rng=self.rng_init, dtype=dtype)
        self.s_scale = SScale(config.s_init, dtype=dtype)

        self.views = ViewSet(visible=list(scene.visible), unobserved=list(scene.unobserved))
        self.weights = LossWeights(beta=config.beta, lam=config.lam,
                                   gamma=config.gamma, gamma_n=config.gamma_n)
        self.sampling = SamplingSpec(n_coarse=config.n_coarse, n_importance=config.n_importance,
                                     perturb=True, bound_radius=config.bound_radius,
                                     bg_color=config.bg_color)
        # buffered visible maps are consistency context, not training targets;
        # render them with a lighter sample budget
        self.buffer_sampling = SamplingSpec(n_coarse=max(8, config.n_coarse * 3 // 4),
                                            n_importance=max(8, config.n_importance // 2),
                                            perturb=True, bound_radius=config.bound_radius,
                                            bg_color=config.bg_color)

        self.oracle = oracle if oracle is not None else self._default_oracle()
        self.frozen = FrozenNoise(config.seed) if config.use_frozen else None
        self.guidance_ctx = GuidanceContext(oracle=self.oracle, prompt_base=scene.prompt_base,
                                            cfg_scale=config.cfg_scale, frozen=self.frozen,
                                            oracle_resolution=config.oracle_resolution)
        self.normal_buffer = NormalBuffer()

        n_params = int(parameter_vector(self.sdf, self.radiance, self.s_scale).numel())
        self.adam = AdamState(m=torch.zeros(n_params, dtype=dtype),
                              v=torch.zeros(n_params, dtype=dtype))
        self.iteration = 0
        self.sds_iteration = 0
        self.nan_streak = 0

    @property
    def sds_active(self) -> bool:
        cfg = self.config
        return cfg.use_sds and (cfg.gamma > 0 or cfg.gamma_n > 0)

    # -- plumbing -----------------------------------------------------------

    def _default_oracle(self):
        url = os.environ.get(GUIDANCE_URL_ENV)
        if url:
            oracle = RemoteGuidanceOracle(url)
            info = oracle.check_schedule()
            log.info("using remote guidance oracle %s (%s)", url, info.get("model_id"))
            return oracle
        return ToyGaussianOracle(mean=self.config.toy_oracle_mean,
                                 cov_scale=self.config.toy_oracle_cov)

    def _modules(self):
        return self.sdf, self.radiance, self.s_scale

    def _gather_grads(self) -> torch.Tensor | None:
        grads = []
        for m in self._modules():
            for p in m.parameters():
                grads.append(torch.zeros_like(p).reshape(-1) if p.grad is None
                             else p.grad.reshape(-1))
        g = torch.cat(grads)
        if not torch.isfinite(g).all():
            return None
        return g

    def _apply_update(self, grads: torch.Tensor) -> None:
        params = parameter_vector(*self._modules())
        lr = lr_schedule(self.iteration, self.config.lr, self.config.warmup,
                         self.config.iterations)
        new = adam_step(params, grads, self.adam, lr, self.config.adam_beta1,
                        self.config.adam_beta2, self.config.adam_eps)
        load_parameter_vector(new, *self._modules())

    def _zero_grads(self) -> None:
        for m in self._modules():
            for p in m.parameters():
                p.grad = None

    def _finish_step(self, backward_tensor: torch.Tensor, record: dict) -> dict:
        self._zero_grads()
        backward_tensor.backward()
        grads = self._gather_grads()
        if grads is None:
            self.nan_streak += 1
            log.warning("iteration %d: non-finite gradients, step skipped (streak %d)",
                        self.iteration, self.nan_streak)
            if self.nan_streak >= 3:
                raise TrainingAborted(self.iteration, "3 consecutive non-finite gradient steps")
            record["skipped"] = True
            return record
        self.nan_streak = 0
        self._apply_update(grads)
        return record

    # -- steps ---------------------------------------------------------------

    def _render_normal_map(self, cam: Camera, grad_normals: bool,
                           sampling: SamplingSpec | None = None) -> torch.Tensor:
        # SDS renders consume the dedicated SDS stream so disabling guidance
        # leaves every other draw untouched
        res = self.config.sds_render_res
        sds_cam = Camera(cam.model, cam.pose, res, res,
                         intrinsics=_scaled_intrinsics(cam, res), extent=cam.extent)
        out = render_image(self.sdf, self.radiance, self.s_scale, sds_cam,
                           sampling or self.sampling, rng=self.rng_sds, need_color=False,
                           need_normal=True, grad_normals=grad_normals,
                           dtype=self.config.torch_dtype)
        return out["normal"]

    def _render_color_map(self, cam: Camera) -> torch.Tensor:
        res = self.config.sds_render_res
        sds_cam = Camera(cam.model, cam.pose, res, res,
                         intrinsics=_scaled_intrinsics(cam, res), extent=cam.extent)
        out = render_image(self.sdf, self.radiance, self.s_scale, sds_cam, self.sampling,
                           rng=self.rng_sds, need_color=True, need_normal=False,
                           dtype=self.config.torch_dtype)
        return out["color"]

    def _visible_step(self, view_idx: int, record: dict) -> dict:
        cfg = self.config
        rec = self.views.visible[view_idx]
        cam = rec.camera
        flat = self.rng_pixels.integers(0, cam.width * cam.height, size=cfg.ray_batch)
        pixels = np.stack([flat % cam.width, flat // cam.width], axis=1)
        rays = generate_rays(cam, pixels, cfg.bound_radius)
        out = render_rays(self.sdf, self.radiance, self.s_scale, rays, self.sampling,
                          rng=self.rng_train, need_color=True, need_normal=False,
                          dtype=cfg.torch_dtype)
        dtype = cfg.torch_dtype
        observed = torch.from_numpy(rec.image[pixels[:, 1], pixels[:, 0]]).to(dtype)
        mask = torch.from_numpy(rec.mask[pixels[:, 1], pixels[:, 0]]).to(dtype)
        l_c = photometric_loss(out.color, observed)
        l_m = mask_loss(out.opacity, mask)
        ray_pts = _sample_points(rays, out.depths)
        eik_pts = eikonal_sample_points(self.rng_train, cfg.eikonal_points, cfg.bound_radius,
                                        ray_pts, dtype=dtype)
        l_eik = eikonal_loss(self.sdf, eik_pts)
        total = total_loss(LossParts(color=l_c, mask=l_m, eikonal=l_eik), self.weights)
        record.update(loss_color=total.terms["color"], loss_mask=total.terms["mask"],
                      loss_eikonal=total.terms["eikonal"], total=total.value)
        record = self._finish_step(total.backward_tensor, record)
        if self.sds_active and cfg.use_multiview and not record.get("skipped"):
            with torch.no_grad():
                nm = self._render_normal_map(cam, grad_normals=False,
                                             sampling=self.buffer_sampling)
            self.normal_buffer.push(nm.detach(), view_idx)
        return record

    def _unobserved_step(self, view_idx: int, record: dict) -> dict:
        cfg = self.config
        cam = self.views.unobserved[view_idx].camera
        dtype = cfg.torch_dtype
        injections: list[SdsInjection] = []

        if self.sds_active:
            k = self.sds_iteration
            self.sds_iteration += 1
            mode = sds_mode_scheduler(k, cfg.use_normals, cfg.use_multiview)
            if mode == MODE_MULTIVIEW and len(self.normal_buffer) < NormalBuffer.CAPACITY:
                log.info("iteration %d: normal buffer has %d/3 maps, falling back to "
                         "single-view guidance", self.iteration, len(self.normal_buffer))
                mode = MODE_SINGLE
            t = sample_timestep(self.rng_sds, cfg.t_min, cfg.t_max)
            seed = self.frozen.seed if self.frozen is not None \
                else int(self.rng_sds.integers(0, 2**63))
            record["mode"] = mode
            try:
                if mode == MODE_COLOR:
                    node = self._render_color_map(cam)
                    if cfg.gamma > 0:
                        g = apply_guidance(node, mode, self.guidance_ctx, t, seed, cfg.gamma)
                        injections.append(g.injection)
                        record["grad_sds"] = g.gradient_norm
                else:
                    normal_map = self._render_normal_map(cam, grad_normals=True)
                    rot = torch.from_numpy(random_rotation(self.rng_sds)).to(dtype)
                    rgb = normals_to_rgb(rotate_normals(normal_map, rot))
                    if cfg.gamma_n > 0:
                        visible_maps = None
                        if mode == MODE_MULTIVIEW:
                            visible_maps = [normals_to_rgb(rotate_normals(m, rot))
                                            for m in self.normal_buffer.maps()]
                        g = apply_guidance(rgb, mode, self.guidance_ctx, t, seed, cfg.gamma_n,
                                           visible_maps=visible_maps)
                        injections.append(g.injection)
                        record["grad_sds_normal"] = g.gradient_norm
            except OracleUnavailable as exc:
                log.warning("iteration %d: guidance oracle unavailable (%s); step skipped",
                            self.iteration, exc)
                record["skipped"] = True
                return record

        eik_pts = eikonal_sample_points(self.rng_train, cfg.eikonal_points, cfg.bound_radius,
                                        dtype=dtype)
        l_eik = eikonal_loss(self.sdf, eik_pts)
        total = total_loss(LossParts(eikonal=l_eik), self.weights, injections)
        record.update(loss_eikonal=total.terms["eikonal"], total=total.value)
        return self._finish_step(total.backward_tensor, record)

    def training_step(self, view_idx: int, kind: str) -> dict:
        record = {"iteration": self.iteration, "kind": kind, "mode": "", "loss_color": 0.0,
                  "loss_mask": 0.0, "loss_eikonal": 0.0, "grad_sds": 0.0,
                  "grad_sds_normal": 0.0, "total": 0.0}
        try:
            if kind == VISIBLE:
                return self._visible_step(view_idx, record)
            return self._unobserved_step(view_idx, record)
        except NonFiniteLoss as exc:
            self.nan_streak += 1
            log.warning("iteration %d: %s; step skipped (streak %d)", self.iteration, exc,
                        self.nan_streak)
            if self.nan_streak >= 3:
                raise TrainingAborted(self.iteration, str(exc)) from exc
            record["skipped"] = True
            return record

    # -- loop ----------------------------------------------------------------

    def save_checkpoint(self, tag: str | None = None) -> Path:
        assert self.out_dir is not None, "trainer needs out_dir to write checkpoints"
        self.out_dir.mkdir(parents=True, exist_ok=True)
        name = tag or f"ckpt_{self.iteration:07d}"
        path = self.out_dir / f"{name}.nsdf"
        save_fields(path, self.sdf, self.radiance, self.s_scale,
                    extras={"iteration": self.iteration, "sds_iteration": self.sds_iteration})
        state = {
            "iteration": self.iteration,
            "sds_iteration": self.sds_iteration,
            "adam_step": self.adam.step,
            "rng": {name: getattr(self, name).bit_generator.state
                    for name in ("rng_view", "rng_pixels", "rng_train", "rng_sds")},
        }
        np.savez(self.out_dir / f"{name}.state.npz",
                 m=self.adam.m.numpy(), v=self.adam.v.numpy(),
                 meta=json.dumps(state, sort_keys=True))
        return path

    def load_state(self, checkpoint_path) -> None:
        path = Path(checkpoint_path)
        sdf, radiance, s_scale, extras = load_fields(path)
        dtype = self.config.torch_dtype
        self.sdf, self.radiance = sdf.to(dtype), radiance.to(dtype)
        self.s_scale = s_scale.to(dtype)
        state_path = path.with_suffix("").with_suffix(".state.npz")
        if state_path.exists():
            blob = np.load(state_path)
            meta = json.loads(str(blob["meta"]))
            self.adam = AdamState(m=torch.from_numpy(blob["m"]).to(dtype),
                                  v=torch.from_numpy(blob["v"]).to(dtype),
                                  step=meta["adam_step"])
            self.iteration = meta["iteration"]
            self.sds_iteration = meta["sds_iteration"]
            for name, st in meta["rng"].items():
                getattr(self, name).bit_generator.state = st

    def fit(self) -> dict:
        cfg = self.config
        csv_writer = None
        csv_file = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            csv_file = open(self.out_dir / "losses.csv", "a", newline="")
            csv_writer = csv.DictWriter(csv_file, fieldnames=CSV_COLUMNS, extrasaction="ignore")
            if self.iteration == 0:
                csv_writer.writeheader()
        records = []
        try:
            while self.iteration < cfg.iterations:
                view_idx, kind = pick_viewpoint(self.rng_view, self.views)
                rec = self.training_step(view_idx, kind)
                records.append(rec)
                if csv_writer is not None:
                    csv_writer.writerow(rec)
                self.iteration += 1
                if self.out_dir is not None and cfg.checkpoint_every > 0 \
                        and self.iteration % cfg.checkpoint_every == 0 \
                        and self.iteration < cfg.iterations:
                    self.save_checkpoint()
            final = self.save_checkpoint("final") if self.out_dir is not None else None
        finally:
            if csv_file is not None:
                csv_file.close()
        return {"final_checkpoint": final, "records": records}


def _scaled_intrinsics(cam: Camera, res: int) -> np.ndarray | None:
    if cam.intrinsics is None:
        return None
    k = cam.intrinsics.copy()
    k[0] *= res / cam.width
    k[1] *= res / cam.height
    return k


def _sample_points(rays, depths: torch.Tensor) -> torch.Tensor:
    o = torch.from_numpy(rays.origins).to(depths.dtype)
    d = torch.from_numpy(rays.dirs).to(depths.dtype)
    return (o.unsqueeze(1) + depths.detach().unsqueeze(-1) * d.unsqueeze(1)).reshape(-1, 3)
