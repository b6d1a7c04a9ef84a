"""Per-triangle visibility marking and evaluation-view filtering.

A triangle is visible iff its center is traceable without occlusion from at
least ``min_views`` of the given viewpoints: the center must face the camera,
project inside the image bounds, and the segment from (center + eps * normal)
to the camera center (or out along the view axis for orthographic cameras)
must hit no other triangle.  A candidate evaluation view is discarded when
more than ``max_visible_fraction`` of its rendering of the reference surface
falls on visible-flagged triangles.
"""

from __future__ import annotations

import logging

import numpy as np

from ..cameras import ORTHOGRAPHIC, Camera, all_pixels, generate_rays
from .bvh import Bvh
from .mesh import TriangleMesh

log = logging.getLogger(__name__)

SELF_HIT_EPS = 1e-6
MIN_VISIBLE_VIEWS = 3
MAX_VISIBLE_FRACTION = 1.0 / 3.0
ORTHO_FAR = 1e3


def mark_visible(mesh: TriangleMesh, views: list[Camera],
                 min_views: int = MIN_VISIBLE_VIEWS) -> np.ndarray:
    """Per-triangle flags: center occlusion-free from >= min_views viewpoints.

    Back-facing triangles never count as visible from a view.  The flags are
    also stored on the mesh.
    """
    if not views:
        raise ValueError("need at least one view")
    if mesh.n_triangles == 0:
        mesh.visible = np.zeros(0, dtype=bool)
        return mesh.visible
    centers = mesh.centroids()
    normals = mesh.face_normals()
    bvh = Bvh(mesh.vertices, mesh.triangles)
    counts = np.zeros(mesh.n_triangles, dtype=np.int64)
    tri_ids = np.arange(mesh.n_triangles)
    origins = centers + SELF_HIT_EPS * normals
    for cam in views:
        uv, in_front = cam.project(centers)
        candidate = in_front & cam.contains_pixel(uv)
        if cam.model == ORTHOGRAPHIC:
            toward = np.broadcast_to(-cam.forward, centers.shape)
            targets = origins + ORTHO_FAR * toward
        else:
            toward = cam.center - centers
            targets = np.broadcast_to(cam.center, centers.shape)
        candidate &= np.einsum("ij,ij->i", normals, toward) > 0.0
        if not candidate.any():
            continue
        blocked = bvh.segments_blocked(origins[candidate], targets[candidate],
                                       exclude=tri_ids[candidate])
        counts[candidate] += ~blocked
    mesh.visible = counts >= min_views
    return mesh.visible


def triangle_id_buffer(mesh: TriangleMesh, cam: Camera, bvh: Bvh | None = None) -> np.ndarray:
    """First-hit triangle id per pixel (-1 on background), shape (H, W)."""
    bvh = bvh or Bvh(mesh.vertices, mesh.triangles)
    rays = generate_rays(cam, all_pixels(cam), bound_radius=np.inf if cam.model == ORTHOGRAPHIC
                         else 1e3)
    _, tri = bvh.ray_first_hit(rays.origins, rays.dirs)
    return tri.reshape(cam.height, cam.width)


def select_unobserved_eval_views(views: list[Camera], reference: TriangleMesh,
                                 max_visible_fraction: float = MAX_VISIBLE_FRACTION
                                 ) -> tuple[list[int], list[dict]]:
    """Keep views whose reference rendering shows at most the given fraction
    of visible-flagged pixels.  Returns (kept indices, per-view records)."""
    if reference.visible is None:
        raise ValueError("reference mesh carries no visibility flags; run mark_visible first")
    bvh = Bvh(reference.vertices, reference.triangles) if reference.n_triangles else None
    kept: list[int] = []
    records: list[dict] = []
    for i, cam in enumerate(views):
        tri = triangle_id_buffer(reference, cam, bvh)
        object_px = int((tri >= 0).sum())
        if object_px == 0:
            log.warning("eval view %d sees no object pixels; discarded", i)
            records.append({"view": i, "object_pixels": 0, "visible_fraction": None,
                            "kept": False})
            continue
        vis_px = int(reference.visible[tri[tri >= 0]].sum())
        frac = vis_px / object_px
        keep = frac <= max_visible_fraction
        if keep:
            kept.append(i)
        records.append({"view": i, "object_pixels": object_px,
                        "visible_fraction": frac, "kept": keep})
    return kept, records
