"""Guidance wire protocol: JSON + base64 float32 planar image payloads.

POST /v1/sds_gradient
  {width, height, channels, timestep, prompt, cfg_scale,
   noise_seed (optional), grid (optional {rows, cols, active}), image}
  -> {width, height, channels, gradient}
GET /v1/health -> {status, model_id, schedule_hash}

This module is the authoritative definition used by both the in-process
client and any server implementation.
"""

from __future__ import annotations

import base64

import numpy as np

from ..images import planar_bytes, planar_from_bytes

HEALTH_PATH = "/v1/health"
GRADIENT_PATH = "/v1/sds_gradient"


class WireError(ValueError):
    """Malformed payload; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def encode_image(image: np.ndarray) -> str:
    return base64.b64encode(planar_bytes(image)).decode("ascii")


def decode_image(payload: str, width: int, height: int, channels: int) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise WireError("image", f"invalid base64: {exc}") from exc
    try:
        return planar_from_bytes(raw, width, height, channels)
    except ValueError as exc:
        raise WireError("image", str(exc)) from exc


def build_request(image: np.ndarray, timestep: float, prompt: str, cfg_scale: float,
                  noise_seed: int | None = None, grid: dict | None = None) -> dict:
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    req = {
        "width": int(w),
        "height": int(h),
        "channels": int(c),
        "timestep": float(timestep),
        "prompt": str(prompt),
        "cfg_scale": float(cfg_scale),
        "image": encode_image(image),
    }
    if noise_seed is not None:
        req["noise_seed"] = int(noise_seed)
    if grid is not None:
        req["grid"] = dict(grid)
    return req


def parse_request(payload: dict, max_size: int = 1024) -> dict:
    """Validate a request dict; returns fields with the image decoded.

    Raises WireError on malformed fields; oversize images raise WireError
    with field "image" and ``oversize=True`` so servers can answer 413.
    """
    if not isinstance(payload, dict):
        raise WireError("body", "request body must be a JSON object")
    out = {}
    for name in ("width", "height", "channels"):
        v = payload.get(name)
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise WireError(name, f"must be a positive integer, got {v!r}")
        out[name] = v
    t = payload.get("timestep")
    if not isinstance(t, (int, float)) or isinstance(t, bool) or not (0.0 <= float(t) <= 1.0):
        raise WireError("timestep", f"must be a number in [0, 1], got {t!r}")
    out["timestep"] = float(t)
    prompt = payload.get("prompt")
    if not isinstance(prompt, str) or not prompt:
        raise WireError("prompt", "must be a nonempty string")
    out["prompt"] = prompt
    cfg = payload.get("cfg_scale")
    if not isinstance(cfg, (int, float)) or isinstance(cfg, bool):
        raise WireError("cfg_scale", f"must be a number, got {cfg!r}")
    out["cfg_scale"] = float(cfg)
    seed = payload.get("noise_seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        raise WireError("noise_seed", f"must be an integer, got {seed!r}")
    out["noise_seed"] = seed
    grid = payload.get("grid")
    if grid is not None:
        if not isinstance(grid, dict):
            raise WireError("grid", "must be an object")
        for k in ("rows", "cols", "active"):
            if k not in grid or not isinstance(grid[k], int) or isinstance(grid[k], bool):
                raise WireError("grid", f"missing or non-integer {k!r}")
        if grid["rows"] != 2 or grid["cols"] != 2 or not (0 <= grid["active"] < 4):
            raise WireError("grid", "only 2x2 grids with active in [0, 4) are supported")
    out["grid"] = grid
    oversize = WireError("image", f"image exceeds maximum size {max_size}")
    oversize.oversize = True
    if out["width"] > max_size or out["height"] > max_size:
        raise oversize
    img = payload.get("image")
    if not isinstance(img, str):
        raise WireError("image", "must be a base64 string")
    out["image"] = decode_image(img, out["width"], out["height"], out["channels"])
    if not np.isfinite(out["image"]).all():
        raise WireError("image", "contains non-finite values")
    return out


def build_response(gradient: np.ndarray) -> dict:
    if gradient.ndim == 2:
        gradient = gradient[:, :, None]
    h, w, c = gradient.shape
    return {
        "width": int(w),
        "height": int(h),
        "channels": int(c),
        "gradient": encode_image(gradient),
    }


def parse_response(payload: dict) -> np.ndarray:
    for name in ("width", "height", "channels"):
        if not isinstance(payload.get(name), int):
            raise WireError(name, "missing or non-integer")
    grad = payload.get("gradient")
    if not isinstance(grad, str):
        raise WireError("gradient", "must be a base64 string")
    return decode_image(grad, payload["width"], payload["height"], payload["channels"])
