"""Bounding volume hierarchy over triangle meshes.

Median-split build (longest centroid axis, leaf size 4) stored as flat
arrays; traversal runs through the selected kernel backend.  Queries return
triangle indices in the original mesh numbering.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Bvh:
    def __init__(self, vertices: np.ndarray, triangles: np.ndarray, leaf_size: int = 4):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        triangles = np.asarray(triangles, dtype=np.int64)
        self.n_triangles = triangles.shape[0]
        if self.n_triangles == 0:
            raise ValueError("cannot build a BVH over an empty mesh")
        v0 = vertices[triangles[:, 0]]
        v1 = vertices[triangles[:, 1]]
        v2 = vertices[triangles[:, 2]]
        tmin = np.minimum(np.minimum(v0, v1), v2)
        tmax = np.maximum(np.maximum(v0, v1), v2)
        centroids = (v0 + v1 + v2) / 3.0

        order = np.arange(self.n_triangles)
        bounds_min, bounds_max = [], []
        left, right, start, count = [], [], [], []
        # (triangle range, parent slot) work stack; parent slot -1 == root
        stack = [(0, self.n_triangles, -1, False)]
        while stack:
            lo, hi, parent, is_right = stack.pop()
            idx = order[lo:hi]
            node = len(bounds_min)
            bounds_min.append(tmin[idx].min(axis=0))
            bounds_max.append(tmax[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            if parent >= 0:
                (right if is_right else left)[parent] = node
            if hi - lo <= leaf_size:
                start[node] = lo
                count[node] = hi - lo
                continue
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (hi - lo) // 2
            sel = np.argpartition(c[:, axis], mid, kind="introselect")
            order[lo:hi] = idx[sel]
            stack.append((lo + mid, hi, node, True))
            stack.append((lo, lo + mid, node, False))

        self.bounds_min = np.ascontiguousarray(bounds_min, dtype=np.float64)
        self.bounds_max = np.ascontiguousarray(bounds_max, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)
        self.order = order                       # bvh position -> original tri
        self.inv_order = np.empty_like(order)
        self.inv_order[order] = np.arange(self.n_triangles)
        self.tri_a = np.ascontiguousarray(v0[order])
        self.tri_e0 = np.ascontiguousarray((v1 - v0)[order])
        self.tri_e1 = np.ascontiguousarray((v2 - v0)[order])

    def _args(self):
        return (self.bounds_min, self.bounds_max, self.left, self.right,
                self.start, self.count, self.tri_a, self.tri_e0, self.tri_e1)

    def closest_point(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance to the mesh and the original index of the nearest triangle."""
        points = np.ascontiguousarray(points, dtype=np.float64)
        dist, tri = kernels.bvh_closest_point(points, *self._args())
        return dist, self.order[tri]

    def ray_first_hit(self, origins: np.ndarray, dirs: np.ndarray, t_max=np.inf,
                      exclude: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        n = origins.shape[0]
        t_arr = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)))
        ex = np.full(n, -1, dtype=np.int64)
        if exclude is not None:
            exclude = np.asarray(exclude, dtype=np.int64)
            valid = exclude >= 0
            ex[valid] = self.inv_order[exclude[valid]]
        t, tri = kernels.bvh_ray_first_hit(origins, dirs, t_arr, *self._args(),
                                           ex, False)
        hit = tri >= 0
        tri_orig = np.where(hit, self.order[np.clip(tri, 0, None)], -1)
        return t, tri_orig

    def segments_blocked(self, p0: np.ndarray, p1: np.ndarray,
                         exclude: np.ndarray | None = None, margin: float = 1e-7) -> np.ndarray:
        """True where the open segment (p0, p1) hits any triangle (optionally
        excluding one per segment).  Uses unnormalized directions with the
        hit parameter in (0, 1 - margin]."""
        p0 = np.ascontiguousarray(p0, dtype=np.float64)
        p1 = np.ascontiguousarray(p1, dtype=np.float64)
        d = p1 - p0
        n = p0.shape[0]
        t_arr = np.full(n, 1.0 - margin)
        ex = np.full(n, -1, dtype=np.int64)
        if exclude is not None:
            exclude = np.asarray(exclude, dtype=np.int64)
            valid = exclude >= 0
            ex[valid] = self.inv_order[exclude[valid]]
        t, tri = kernels.bvh_ray_first_hit(np.ascontiguousarray(p0), np.ascontiguousarray(d),
                                           t_arr, *self._args(), ex, True)
        return tri >= 0
