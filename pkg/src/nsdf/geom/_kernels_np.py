"""NumPy implementations of the geometry kernels.

This is the pure-Python fallback behind nsdf.geom.kernels; the compiled
extension mirrors exactly these semantics.  Brute-force reference queries
(vectorized over query x triangle) also live here and double as test oracles
for the accelerated paths.
"""

from __future__ import annotations

import numpy as np

INF = np.inf


# ---------------------------------------------------------------------------
# primitives


def point_triangle_dist2(p: np.ndarray, a: np.ndarray, e0: np.ndarray, e1: np.ndarray) -> np.ndarray:
    """Squared distances from points (n, 3) to triangles (n, 3) pairwise.

    Ericson's region-based closest point on triangle (a, a+e0, a+e1).
    """
    ap = p - a
    d1 = np.einsum("ij,ij->i", e0, ap)
    d2 = np.einsum("ij,ij->i", e1, ap)
    bp = ap - e0
    d3 = np.einsum("ij,ij->i", e0, bp)
    d4 = np.einsum("ij,ij->i", e1, bp)
    cp = ap - e1
    d5 = np.einsum("ij,ij->i", e0, cp)
    d6 = np.einsum("ij,ij->i", e1, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        v_ac = d2 / (d2 - d6)
        v_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    n = p.shape[0]
    closest = np.empty_like(p)
    done = np.zeros(n, dtype=bool)

    def assign(mask, value):
        nonlocal done
        m = mask & ~done
        closest[m] = value[m]
        done |= m

    assign((d1 <= 0) & (d2 <= 0), a)                                   # vertex a
    assign((d3 >= 0) & (d4 <= d3), a + e0)                             # vertex b
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + np.nan_to_num(v_ab)[:, None] * e0)
    assign((d6 >= 0) & (d5 <= d6), a + e1)                             # vertex c
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + np.nan_to_num(v_ac)[:, None] * e1)
    assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
           a + e0 + np.nan_to_num(v_bc)[:, None] * (e1 - e0))
    assign(np.ones(n, dtype=bool), a + np.nan_to_num(v_in)[:, None] * e0 + np.nan_to_num(w_in)[:, None] * e1)
    d = p - closest
    return np.einsum("ij,ij->i", d, d)


def ray_triangle_t(orig: np.ndarray, direction: np.ndarray, a: np.ndarray,
                   e0: np.ndarray, e1: np.ndarray) -> np.ndarray:
    """Moller-Trumbore intersection parameter, pairwise; inf on miss."""
    pvec = np.cross(direction, e1)
    det = np.einsum("ij,ij->i", e0, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(np.abs(det) > 1e-14, 1.0 / det, 0.0)
    tvec = orig - a
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e0)
    v = np.einsum("ij,ij->i", direction, qvec) * inv
    t = np.einsum("ij,ij->i", e1, qvec) * inv
    ok = (np.abs(det) > 1e-14) & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
    return np.where(ok, t, INF)


# ---------------------------------------------------------------------------
# brute-force references (O(n_query * n_tri)); chunked over queries


def brute_closest_point(points: np.ndarray, a: np.ndarray, e0: np.ndarray, e1: np.ndarray,
                        chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    n, m = points.shape[0], a.shape[0]
    dist = np.empty(n)
    tri = np.empty(n, dtype=np.int64)
    for lo in range(0, n, chunk):
        p = points[lo:lo + chunk]
        k = p.shape[0]
        pp = np.repeat(p, m, axis=0)
        d2 = point_triangle_dist2(pp, np.tile(a, (k, 1)), np.tile(e0, (k, 1)),
                                  np.tile(e1, (k, 1))).reshape(k, m)
        tri[lo:lo + k] = d2.argmin(axis=1)
        dist[lo:lo + k] = np.sqrt(d2[np.arange(k), tri[lo:lo + k]])
    return dist, tri


def brute_ray_hit(origins: np.ndarray, dirs: np.ndarray, a: np.ndarray, e0: np.ndarray,
                  e1: np.ndarray, t_max: float = INF, chunk: int = 256,
                  exclude: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    n, m = origins.shape[0], a.shape[0]
    t_out = np.full(n, INF)
    tri = np.full(n, -1, dtype=np.int64)
    for lo in range(0, n, chunk):
        o, d = origins[lo:lo + chunk], dirs[lo:lo + chunk]
        k = o.shape[0]
        t = ray_triangle_t(np.repeat(o, m, axis=0), np.repeat(d, m, axis=0),
                           np.tile(a, (k, 1)), np.tile(e0, (k, 1)), np.tile(e1, (k, 1))).reshape(k, m)
        t[t > t_max] = INF
        if exclude is not None:
            ex = np.asarray(exclude[lo:lo + k])
            rows = np.nonzero(ex >= 0)[0]
            t[rows, ex[rows]] = INF
        best = t.argmin(axis=1)
        tb = t[np.arange(k), best]
        tri[lo:lo + k] = np.where(np.isfinite(tb), best, -1)
        t_out[lo:lo + k] = tb
    return t_out, tri


# ---------------------------------------------------------------------------
# BVH traversals (per-query Python walk; correct but slow — the compiled
# extension is the production path)


def _aabb_dist2(p, bmin, bmax):
    d = np.maximum(np.maximum(bmin - p, 0.0), p - bmax)
    return float(d @ d)


def bvh_closest_point(points, bounds_min, bounds_max, left, right, start, count,
                      tri_a, tri_e0, tri_e1) -> tuple[np.ndarray, np.ndarray]:
    n = points.shape[0]
    dist = np.empty(n)
    tri = np.empty(n, dtype=np.int64)
    for i in range(n):
        p = points[i]
        best = INF
        best_tri = -1
        stack = [0]
        while stack:
            node = stack.pop()
            if _aabb_dist2(p, bounds_min[node], bounds_max[node]) >= best:
                continue
            if count[node] > 0:
                s, c = start[node], count[node]
                d2 = point_triangle_dist2(np.broadcast_to(p, (c, 3)).copy(),
                                          tri_a[s:s + c], tri_e0[s:s + c], tri_e1[s:s + c])
                j = int(d2.argmin())
                if d2[j] < best:
                    best = float(d2[j])
                    best_tri = s + j
            else:
                l, r = left[node], right[node]
                dl = _aabb_dist2(p, bounds_min[l], bounds_max[l])
                dr = _aabb_dist2(p, bounds_min[r], bounds_max[r])
                if dl < dr:
                    stack.append(r)
                    stack.append(l)
                else:
                    stack.append(l)
                    stack.append(r)
        dist[i] = np.sqrt(best)
        tri[i] = best_tri
    return dist, tri


def _slab_hit(o, inv_d, bmin, bmax, t_best):
    t0, t1 = 0.0, t_best
    for k in range(3):
        lo = (bmin[k] - o[k]) * inv_d[k]
        hi = (bmax[k] - o[k]) * inv_d[k]
        if lo > hi:
            lo, hi = hi, lo
        t0 = max(t0, lo)
        t1 = min(t1, hi)
        if t0 > t1:
            return False
    return True


def bvh_ray_first_hit(origins, dirs, t_max, bounds_min, bounds_max, left, right, start, count,
                      tri_a, tri_e0, tri_e1,
                      exclude: np.ndarray | None = None,
                      any_hit: bool = False) -> tuple[np.ndarray, np.ndarray]:
    n = origins.shape[0]
    t_out = np.full(n, INF)
    tri_out = np.full(n, -1, dtype=np.int64)
    t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))
    for i in range(n):
        o, d = origins[i], dirs[i]
        with np.errstate(divide="ignore"):
            inv_d = np.where(d != 0.0, 1.0 / d, np.copysign(INF, d))
        best = float(t_max[i])
        best_tri = -1
        skip = -1 if exclude is None else int(exclude[i])
        stack = [0]
        while stack:
            node = stack.pop()
            if not _slab_hit(o, inv_d, bounds_min[node], bounds_max[node], best):
                continue
            if count[node] > 0:
                s, c = start[node], count[node]
                t = ray_triangle_t(np.broadcast_to(o, (c, 3)).copy(), np.broadcast_to(d, (c, 3)).copy(),
                                   tri_a[s:s + c], tri_e0[s:s + c], tri_e1[s:s + c])
                for j in range(c):
                    if s + j == skip:
                        continue
                    if t[j] < best:
                        best = float(t[j])
                        best_tri = s + j
                        if any_hit:
                            stack = []
                            break
            else:
                stack.append(right[node])
                stack.append(left[node])
        if best_tri >= 0:
            t_out[i] = best
            tri_out[i] = best_tri
    return t_out, tri_out


def poisson_thin(points: np.ndarray, radius: float) -> np.ndarray:
    """Dart-throwing acceptance mask in input order: a point is kept iff no
    earlier kept point lies strictly within ``radius``."""
    n = points.shape[0]
    keep = np.zeros(n, dtype=np.uint8)
    if n == 0:
        return keep
    cell = radius / np.sqrt(3.0)
    grid: dict[tuple[int, int, int], int] = {}
    r2 = radius * radius
    cells = np.floor(points / cell).astype(np.int64)
    for i in range(n):
        key = (int(cells[i, 0]), int(cells[i, 1]), int(cells[i, 2]))
        if key in grid:  # same cell implies distance <= radius
            continue
        cx, cy, cz = key
        ok = True
        p = points[i]
        for dx in (-2, -1, 0, 1, 2):
            for dy in (-2, -1, 0, 1, 2):
                for dz in (-2, -1, 0, 1, 2):
                    j = grid.get((cx + dx, cy + dy, cz + dz))
                    if j is not None:
                        d = points[j] - p
                        if d @ d < r2:
                            ok = False
                            break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            keep[i] = 1
            grid[key] = i
    return keep
