"""Guidance oracles: the in-process analytic toy model and the remote client.

An oracle answers one question: given a rendered image, a timestep, a prompt
and a noise seed, what is w(t)(eps_hat - eps) in image space?  The toy oracle
is the exact optimal denoiser for a Gaussian image distribution
N(mean, cov_scale^2 I), which makes every guidance formula verifiable in
closed form.  The remote client speaks the wire protocol and refuses to serve
if the advertised schedule hash differs from the local constants.
"""

from __future__ import annotations

import numpy as np

from . import wire
from .guidance import sds_gradient
from .noise import noise_image
from .schedule import DEFAULT_SCHEDULE, DiffusionSchedule

TOY_MODEL_ID = "toy-gaussian"


class OracleUnavailable(RuntimeError):
    """Remote oracle failed or timed out; the training step should be skipped."""


class ToyGaussianOracle:
    """Optimal denoiser for x ~ N(mean, cov_scale^2 I).

    With x_t = alpha_t x + sigma_t eps the posterior mean of eps is
    eps_hat = sigma_t (x_t - alpha_t mean) / (alpha_t^2 cov_scale^2 + sigma_t^2);
    conditional and unconditional branches coincide (CFG-neutral).
    """

    def __init__(self, mean, cov_scale: float,
                 schedule: DiffusionSchedule = DEFAULT_SCHEDULE,
                 rng: np.random.Generator | None = None):
        if cov_scale <= 0:
            raise ValueError("cov_scale must be positive")
        self.mean = np.asarray(mean, dtype=np.float64)
        self.cov_scale = float(cov_scale)
        self.schedule = schedule
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._noise_cache: dict[tuple, np.ndarray] = {}

    def mean_for(self, shape: tuple[int, ...]) -> np.ndarray:
        if self.mean.ndim == 0:
            return np.full(shape, float(self.mean))
        if self.mean.shape == tuple(shape):
            return self.mean
        import cv2

        h, w = shape[0], shape[1]
        resized = cv2.resize(self.mean.astype(np.float64), (w, h), interpolation=cv2.INTER_LINEAR)
        return resized.reshape(shape)

    def predict(self, x_t: np.ndarray, t: float, prompt: str) -> tuple[np.ndarray, np.ndarray]:
        alpha = float(self.schedule.alpha(t))
        sigma = float(self.schedule.sigma(t))
        mean = self.mean_for(x_t.shape)
        eps_hat = sigma * (x_t - alpha * mean) / (alpha**2 * self.cov_scale**2 + sigma**2)
        return eps_hat, eps_hat

    def gradient_for(self, image: np.ndarray, timestep: float, prompt: str, cfg_scale: float,
                     noise_seed: int | None = None, grid: dict | None = None) -> np.ndarray:
        if noise_seed is None:
            noise_seed = int(self._rng.integers(0, 2**63))
        key = (int(noise_seed), image.shape)
        eps = self._noise_cache.get(key)
        if eps is None:
            eps = noise_image(noise_seed, image.shape)
            if len(self._noise_cache) > 16:
                self._noise_cache.clear()
            self._noise_cache[key] = eps
        return sds_gradient(image, timestep, eps, self.predict, prompt, cfg_scale, self.schedule)

    def health(self) -> dict:
        return {"status": "ok", "model_id": TOY_MODEL_ID, "schedule_hash": self.schedule.hash}


class RemoteGuidanceOracle:
    """HTTP client for a guidance service implementing the wire protocol."""

    def __init__(self, base_url: str, timeout: float = 60.0,
                 schedule: DiffusionSchedule = DEFAULT_SCHEDULE):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.schedule = schedule

    def health(self) -> dict:
        import requests

        try:
            resp = requests.get(self.base_url + wire.HEALTH_PATH, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except Exception as exc:
            raise OracleUnavailable(f"health check failed: {exc}") from exc

    def check_schedule(self) -> dict:
        info = self.health()
        if info.get("schedule_hash") != self.schedule.hash:
            raise OracleUnavailable(
                f"schedule hash mismatch: service advertises {info.get('schedule_hash')!r}, "
                f"client uses {self.schedule.hash!r}")
        return info

    def gradient_for(self, image: np.ndarray, timestep: float, prompt: str, cfg_scale: float,
                     noise_seed: int | None = None, grid: dict | None = None) -> np.ndarray:
        import requests

        req = wire.build_request(image.astype(np.float32), timestep, prompt, cfg_scale,
                                 noise_seed=noise_seed, grid=grid)
        try:
            resp = requests.post(self.base_url + wire.GRADIENT_PATH, json=req, timeout=self.timeout)
        except Exception as exc:
            raise OracleUnavailable(f"guidance request failed: {exc}") from exc
        if resp.status_code != 200:
            raise OracleUnavailable(f"guidance request returned {resp.status_code}: {resp.text[:200]}")
        grad = wire.parse_response(resp.json())
        if grad.shape[:2] != image.shape[:2]:
            raise OracleUnavailable(f"gradient shape {grad.shape} does not match image {image.shape}")
        return grad.astype(np.float64).reshape(image.shape)
