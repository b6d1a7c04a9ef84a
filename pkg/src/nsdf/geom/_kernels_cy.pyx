# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels: BVH closest-point / ray-cast / segment-occlusion
queries and Poisson-disk thinning.  Semantics mirror _kernels_np exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, floor, sqrt

cnp.import_array()

DEF STACK_CAP = 256


cdef inline double _dot3(double ax, double ay, double az, double bx, double by, double bz) nogil:
    return ax * bx + ay * by + az * bz


cdef double _pt_tri_dist2(double px, double py, double pz,
                          const double[:, ::1] a, const double[:, ::1] e0,
                          const double[:, ::1] e1, Py_ssize_t i) nogil:
    cdef double ax = a[i, 0], ay = a[i, 1], az = a[i, 2]
    cdef double e0x = e0[i, 0], e0y = e0[i, 1], e0z = e0[i, 2]
    cdef double e1x = e1[i, 0], e1y = e1[i, 1], e1z = e1[i, 2]
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = _dot3(e0x, e0y, e0z, apx, apy, apz)
    cdef double d2 = _dot3(e1x, e1y, e1z, apx, apy, apz)
    cdef double cx, cy, cz, v, w, denom
    cdef double bpx, bpy, bpz, d3, d4, d5, d6, cpx, cpy, cpz, va, vb, vc
    if d1 <= 0 and d2 <= 0:
        cx = ax; cy = ay; cz = az
    else:
        bpx = apx - e0x; bpy = apy - e0y; bpz = apz - e0z
        d3 = _dot3(e0x, e0y, e0z, bpx, bpy, bpz)
        d4 = _dot3(e1x, e1y, e1z, bpx, bpy, bpz)
        if d3 >= 0 and d4 <= d3:
            cx = ax + e0x; cy = ay + e0y; cz = az + e0z
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0 and d1 >= 0 and d3 <= 0:
                v = d1 / (d1 - d3)
                cx = ax + v * e0x; cy = ay + v * e0y; cz = az + v * e0z
            else:
                cpx = apx - e1x; cpy = apy - e1y; cpz = apz - e1z
                d5 = _dot3(e0x, e0y, e0z, cpx, cpy, cpz)
                d6 = _dot3(e1x, e1y, e1z, cpx, cpy, cpz)
                if d6 >= 0 and d5 <= d6:
                    cx = ax + e1x; cy = ay + e1y; cz = az + e1z
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0 and d2 >= 0 and d6 <= 0:
                        v = d2 / (d2 - d6)
                        cx = ax + v * e1x; cy = ay + v * e1y; cz = az + v * e1z
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
                            v = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                            cx = ax + e0x + v * (e1x - e0x)
                            cy = ay + e0y + v * (e1y - e0y)
                            cz = az + e0z + v * (e1z - e0z)
                        else:
                            denom = 1.0 / (va + vb + vc)
                            v = vb * denom; w = vc * denom
                            cx = ax + v * e0x + w * e1x
                            cy = ay + v * e0y + w * e1y
                            cz = az + v * e0z + w * e1z
    cdef double dx = px - cx, dy = py - cy, dz = pz - cz
    return dx * dx + dy * dy + dz * dz


cdef double _ray_tri_t(double ox, double oy, double oz, double dx, double dy, double dz,
                       const double[:, ::1] a, const double[:, ::1] e0,
                       const double[:, ::1] e1, Py_ssize_t i) nogil:
    cdef double e0x = e0[i, 0], e0y = e0[i, 1], e0z = e0[i, 2]
    cdef double e1x = e1[i, 0], e1y = e1[i, 1], e1z = e1[i, 2]
    cdef double pvx = dy * e1z - dz * e1y
    cdef double pvy = dz * e1x - dx * e1z
    cdef double pvz = dx * e1y - dy * e1x
    cdef double det = _dot3(e0x, e0y, e0z, pvx, pvy, pvz)
    if det < 1e-14 and det > -1e-14:
        return INFINITY
    cdef double inv = 1.0 / det
    cdef double tvx = ox - a[i, 0], tvy = oy - a[i, 1], tvz = oz - a[i, 2]
    cdef double u = _dot3(tvx, tvy, tvz, pvx, pvy, pvz) * inv
    if u < 0.0 or u > 1.0:
        return INFINITY
    cdef double qvx = tvy * e0z - tvz * e0y
    cdef double qvy = tvz * e0x - tvx * e0z
    cdef double qvz = tvx * e0y - tvy * e0x
    cdef double v = _dot3(dx, dy, dz, qvx, qvy, qvz) * inv
    if v < 0.0 or u + v > 1.0:
        return INFINITY
    cdef double t = _dot3(e1x, e1y, e1z, qvx, qvy, qvz) * inv
    if t <= 0.0:
        return INFINITY
    return t


cdef inline double _aabb_dist2(double px, double py, double pz,
                               const double[:, ::1] bmin, const double[:, ::1] bmax,
                               Py_ssize_t node) nogil:
    cdef double d = 0.0, v
    v = bmin[node, 0] - px
    if v < 0:
        v = px - bmax[node, 0]
    if v > 0:
        d += v * v
    v = bmin[node, 1] - py
    if v < 0:
        v = py - bmax[node, 1]
    if v > 0:
        d += v * v
    v = bmin[node, 2] - pz
    if v < 0:
        v = pz - bmax[node, 2]
    if v > 0:
        d += v * v
    return d


cdef inline bint _slab_hit(double ox, double oy, double oz,
                           double ix, double iy, double iz,
                           const double[:, ::1] bmin, const double[:, ::1] bmax,
                           Py_ssize_t node, double t_best) nogil:
    cdef double t0 = 0.0, t1 = t_best, lo, hi, tmp
    lo = (bmin[node, 0] - ox) * ix
    hi = (bmax[node, 0] - ox) * ix
    if lo > hi:
        tmp = lo; lo = hi; hi = tmp
    if lo > t0:
        t0 = lo
    if hi < t1:
        t1 = hi
    if t0 > t1:
        return 0
    lo = (bmin[node, 1] - oy) * iy
    hi = (bmax[node, 1] - oy) * iy
    if lo > hi:
        tmp = lo; lo = hi; hi = tmp
    if lo > t0:
        t0 = lo
    if hi < t1:
        t1 = hi
    if t0 > t1:
        return 0
    lo = (bmin[node, 2] - oz) * iz
    hi = (bmax[node, 2] - oz) * iz
    if lo > hi:
        tmp = lo; lo = hi; hi = tmp
    if lo > t0:
        t0 = lo
    if hi < t1:
        t1 = hi
    return t0 <= t1


def bvh_closest_point(const double[:, ::1] points,
                      const double[:, ::1] bounds_min, const double[:, ::1] bounds_max,
                      const long long[::1] left, const long long[::1] right,
                      const long long[::1] start, const long long[::1] count,
                      const double[:, ::1] tri_a, const double[:, ::1] tri_e0,
                      const double[:, ::1] tri_e1):
    cdef Py_ssize_t n = points.shape[0]
    dist = np.empty(n, dtype=np.float64)
    tri = np.empty(n, dtype=np.int64)
    cdef double[::1] dist_v = dist
    cdef long long[::1] tri_v = tri
    cdef Py_ssize_t i, j, node, s, c, sp
    cdef long long stack[STACK_CAP]
    cdef double px, py, pz, best, d2, dl, dr
    cdef long long best_tri, l, r
    with nogil:
        for i in range(n):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            best = INFINITY
            best_tri = -1
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = <Py_ssize_t> stack[sp]
                if _aabb_dist2(px, py, pz, bounds_min, bounds_max, node) >= best:
                    continue
                if count[node] > 0:
                    s = <Py_ssize_t> start[node]
                    c = <Py_ssize_t> count[node]
                    for j in range(s, s + c):
                        d2 = _pt_tri_dist2(px, py, pz, tri_a, tri_e0, tri_e1, j)
                        if d2 < best:
                            best = d2
                            best_tri = j
                else:
                    l = left[node]; r = right[node]
                    dl = _aabb_dist2(px, py, pz, bounds_min, bounds_max, <Py_ssize_t> l)
                    dr = _aabb_dist2(px, py, pz, bounds_min, bounds_max, <Py_ssize_t> r)
                    if sp + 2 <= STACK_CAP:
                        if dl < dr:
                            stack[sp] = r; sp += 1
                            stack[sp] = l; sp += 1
                        else:
                            stack[sp] = l; sp += 1
                            stack[sp] = r; sp += 1
            dist_v[i] = sqrt(best)
            tri_v[i] = best_tri
    return dist, tri


def bvh_ray_first_hit(const double[:, ::1] origins, const double[:, ::1] dirs,
                      const double[::1] t_max,
                      const double[:, ::1] bounds_min, const double[:, ::1] bounds_max,
                      const long long[::1] left, const long long[::1] right,
                      const long long[::1] start, const long long[::1] count,
                      const double[:, ::1] tri_a, const double[:, ::1] tri_e0,
                      const double[:, ::1] tri_e1,
                      const long long[::1] exclude, bint any_hit):
    cdef Py_ssize_t n = origins.shape[0]
    t_out = np.full(n, np.inf, dtype=np.float64)
    tri_out = np.full(n, -1, dtype=np.int64)
    cdef double[::1] t_v = t_out
    cdef long long[::1] tri_v = tri_out
    cdef Py_ssize_t i, j, node, s, c, sp
    cdef long long stack[STACK_CAP]
    cdef double ox, oy, oz, dx, dy, dz, ix, iy, iz, best, t
    cdef long long best_tri, skip
    with nogil:
        for i in range(n):
            ox = origins[i, 0]; oy = origins[i, 1]; oz = origins[i, 2]
            dx = dirs[i, 0]; dy = dirs[i, 1]; dz = dirs[i, 2]
            ix = 1.0 / dx if dx != 0.0 else (INFINITY if dx >= 0 else -INFINITY)
            iy = 1.0 / dy if dy != 0.0 else (INFINITY if dy >= 0 else -INFINITY)
            iz = 1.0 / dz if dz != 0.0 else (INFINITY if dz >= 0 else -INFINITY)
            best = t_max[i]
            best_tri = -1
            skip = exclude[i]
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = <Py_ssize_t> stack[sp]
                if not _slab_hit(ox, oy, oz, ix, iy, iz, bounds_min, bounds_max, node, best):
                    continue
                if count[node] > 0:
                    s = <Py_ssize_t> start[node]
                    c = <Py_ssize_t> count[node]
                    for j in range(s, s + c):
                        if j == skip:
                            continue
                        t = _ray_tri_t(ox, oy, oz, dx, dy, dz, tri_a, tri_e0, tri_e1, j)
                        if t < best:
                            best = t
                            best_tri = j
                            if any_hit:
                                sp = 0
                                break
                else:
                    if sp + 2 <= STACK_CAP:
                        stack[sp] = right[node]; sp += 1
                        stack[sp] = left[node]; sp += 1
            if best_tri >= 0:
                t_v[i] = best
                tri_v[i] = best_tri
    return t_out, tri_out


cdef inline long long _cell_key(long long cx, long long cy, long long cz) nogil:
    # 21 bits per axis, offset into the positive range
    return ((cx + 1048576) << 42) | ((cy + 1048576) << 21) | (cz + 1048576)


cdef inline long long _hash_slot(long long key, long long mask) nogil:
    cdef unsigned long long h = (<unsigned long long> key) * 0x9E3779B97F4A7C15ULL
    return <long long> ((h >> 17) & (<unsigned long long> mask))


def poisson_thin(const double[:, ::1] points, double radius):
    """Dart-throwing acceptance mask in input order (one accept per grid cell,
    neighborhood distance checks against accepted points)."""
    cdef Py_ssize_t n = points.shape[0]
    keep = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] keep_v = keep
    if n == 0:
        return keep
    cdef double cell = radius / sqrt(3.0)
    cdef double r2 = radius * radius
    cdef Py_ssize_t cap = 1024
    while cap < 2 * n:
        cap <<= 1
    table_keys = np.full(cap, -1, dtype=np.int64)
    table_vals = np.zeros(cap, dtype=np.int64)
    cdef long long[::1] keys = table_keys
    cdef long long[::1] vals = table_vals
    cdef long long mask = cap - 1
    cdef Py_ssize_t i, slot
    cdef long long cx, cy, cz, nx, ny, nz, key, j
    cdef double px, py, pz, ddx, ddy, ddz
    cdef int dx, dy, dz
    cdef bint ok
    with nogil:
        for i in range(n):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            cx = <long long> floor(px / cell)
            cy = <long long> floor(py / cell)
            cz = <long long> floor(pz / cell)
            ok = True
            for dx in range(-2, 3):
                nx = cx + dx
                for dy in range(-2, 3):
                    ny = cy + dy
                    for dz in range(-2, 3):
                        nz = cz + dz
                        key = _cell_key(nx, ny, nz)
                        slot = <Py_ssize_t> _hash_slot(key, mask)
                        while keys[slot] != -1:
                            if keys[slot] == key:
                                if dx == 0 and dy == 0 and dz == 0:
                                    ok = False  # same cell occupied
                                else:
                                    j = vals[slot]
                                    ddx = points[j, 0] - px
                                    ddy = points[j, 1] - py
                                    ddz = points[j, 2] - pz
                                    if ddx * ddx + ddy * ddy + ddz * ddz < r2:
                                        ok = False
                                break
                            slot = <Py_ssize_t> ((slot + 1) & mask)
                        if not ok:
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                keep_v[i] = 1
                key = _cell_key(cx, cy, cz)
                slot = <Py_ssize_t> _hash_slot(key, mask)
                while keys[slot] != -1:
                    slot = <Py_ssize_t> ((slot + 1) & mask)
                keys[slot] = key
                vals[slot] = i
    return keep
