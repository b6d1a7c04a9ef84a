"""Geometry kernel backend selection.

The compiled extension (nsdf.geom._kernels_cy) is used when importable;
otherwise the NumPy implementation takes over.  Set NSDF_PURE_PYTHON=1 to
force the fallback (the benchmark uses this to compare both).
"""

from __future__ import annotations

import os

from . import _kernels_np

if os.environ.get("NSDF_PURE_PYTHON", "") == "1":
    _impl = _kernels_np
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_np
        BACKEND = "numpy"

bvh_closest_point = _impl.bvh_closest_point
bvh_ray_first_hit = _impl.bvh_ray_first_hit
poisson_thin = _impl.poisson_thin

# brute-force references are NumPy-only by design (independent oracle route)
brute_closest_point = _kernels_np.brute_closest_point
brute_ray_hit = _kernels_np.brute_ray_hit
point_triangle_dist2 = _kernels_np.point_triangle_dist2
ray_triangle_t = _kernels_np.ray_triangle_t
