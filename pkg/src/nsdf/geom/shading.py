"""Deterministic shaded evaluation renders.

Orthographic camera, Lambertian shading with a single directional light
behind the camera (light direction = opposite of the view direction), no
shadows, white background.  Rasterization is a per-pixel BVH ray cast.
"""

from __future__ import annotations

import numpy as np

from ..cameras import ORTHOGRAPHIC, Camera, all_pixels, generate_rays, look_at
from .bvh import Bvh
from .mesh import TriangleMesh

EVAL_COLOR = (0.85, 0.45, 0.30)   # any saturated non-gray color works
EVAL_BACKGROUND = (1.0, 1.0, 1.0)


def render_eval_view(mesh: TriangleMesh, view: Camera, color=EVAL_COLOR,
                     bvh: Bvh | None = None) -> np.ndarray:
    """Diffuse render (H, W, 3) in [0, 1]; intensity = max(n . l, 0)."""
    if view.model != ORTHOGRAPHIC:
        raise ValueError("evaluation renders use orthographic cameras")
    h, w = view.height, view.width
    img = np.ones((h, w, 3), dtype=np.float64)
    img *= np.asarray(EVAL_BACKGROUND)
    if mesh.n_triangles == 0:
        return img
    bvh = bvh or Bvh(mesh.vertices, mesh.triangles)
    rays = generate_rays(view, all_pixels(view), bound_radius=1e3)
    _, tri = bvh.ray_first_hit(rays.origins, rays.dirs)
    hit = tri >= 0
    if hit.any():
        light = -view.forward  # directional light behind the camera
        normals = mesh.face_normals()[tri[hit]]
        lam = np.clip(normals @ light, 0.0, None)
        shaded = lam[:, None] * np.asarray(color)[None, :]
        flat = img.reshape(-1, 3)
        flat[hit] = shaded
    return img


def fibonacci_sphere_views(n_views: int, distance: float = 2.5, extent: float = 2.2,
                           resolution: int = 256) -> list[Camera]:
    """Orthographic cameras on a Fibonacci sphere, all looking at the origin."""
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    views = []
    for i in range(n_views):
        z = 1.0 - (2.0 * i + 1.0) / n_views
        r = np.sqrt(max(0.0, 1.0 - z * z))
        phi = 2.0 * np.pi * i / golden
        eye = distance * np.array([r * np.cos(phi), r * np.sin(phi), z])
        views.append(Camera(ORTHOGRAPHIC, look_at(eye), resolution, resolution,
                            extent=np.array([extent, extent])))
    return views
