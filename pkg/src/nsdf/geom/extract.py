"""Isosurface extraction from the SDF zero level set."""

from __future__ import annotations

import logging

import numpy as np
from skimage import measure

from .mesh import TriangleMesh

log = logging.getLogger(__name__)


def extract_mesh(field, grid_resolution: int, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
                 keep_largest: bool = False) -> TriangleMesh:
    """Marching cubes over the field's zero level set.

    ``field`` needs an ``sdf_grid(points) -> values`` method.  Faces are
    oriented so normals point along the SDF gradient (outward).
    """
    if grid_resolution < 8:
        raise ValueError(f"grid_resolution must be >= 8, got {grid_resolution}")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    axes = [np.linspace(lo[k], hi[k], grid_resolution) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = field.sdf_grid(grid).reshape(grid_resolution, grid_resolution, grid_resolution)
    if values.min() > 0 or values.max() < 0:
        log.warning("empty level set (sdf range [%g, %g]); returning empty mesh",
                    values.min(), values.max())
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    spacing = tuple((hi - lo) / (grid_resolution - 1))
    verts, faces, _, _ = measure.marching_cubes(values, level=0.0, spacing=spacing)
    verts = verts + lo
    mesh = TriangleMesh(verts.astype(np.float64), faces.astype(np.int64)).cleanup()

    # orient along the outward SDF gradient, estimated by central differences
    n_probe = min(256, mesh.n_triangles)
    if n_probe:
        idx = np.linspace(0, mesh.n_triangles - 1, n_probe).astype(np.int64)
        c = mesh.centroids()[idx]
        h = float(spacing[0]) * 0.25
        grad = np.zeros_like(c)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            grad[:, k] = (field.sdf_grid(c + e) - field.sdf_grid(c - e)) / (2 * h)
        score = np.einsum("ij,ij->i", mesh.face_normals()[idx], grad).sum()
        if score < 0:
            mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1].copy(), mesh.visible)

    if keep_largest:
        from .mesh import largest_component

        mesh = largest_component(mesh)
    return mesh
