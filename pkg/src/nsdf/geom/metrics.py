"""Geometric evaluation: unit-sphere normalization, precision/recall/F-score.

Both surfaces are mapped by the similarity transform that fits the reference
into the unit sphere (exact minimal enclosing sphere of its vertices), then
resampled uniformly; precision is the fraction of reconstruction samples
within the distance threshold of the reference mesh and recall the converse.
The visible-part recall restricts reference samples to triangles flagged
visible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .bvh import Bvh
from .mesh import TriangleMesh

DEFAULT_THRESHOLD = 0.02
DEFAULT_SPACING = 0.003


# ---------------------------------------------------------------------------
# minimal enclosing sphere (Welzl, iterative move-to-front formulation)


def _circumsphere(pts: np.ndarray) -> tuple[np.ndarray, float]:
    """Smallest sphere with all of the 1..4 given points on its boundary."""
    k = len(pts)
    if k == 1:
        return pts[0], 0.0
    if k == 2:
        c = 0.5 * (pts[0] + pts[1])
        return c, float(np.linalg.norm(pts[0] - c))
    # solve |p_i - c|^2 = r^2 via the linear system against p_0
    a = 2.0 * (pts[1:] - pts[0])
    b = np.einsum("ij,ij->i", pts[1:], pts[1:]) - pts[0] @ pts[0]
    if k == 3:
        # constrain c to the plane of the three points
        n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
        nn = np.linalg.norm(n)
        if nn < 1e-30:  # collinear: fall back to farthest pair
            d = [(np.linalg.norm(pts[i] - pts[j]), i, j) for i in range(3) for j in range(i + 1, 3)]
            _, i, j = max(d)
            return _circumsphere(pts[[i, j]])
        a = np.vstack([a, n])
        b = np.append(b, n @ pts[0])
    try:
        c = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        c = np.linalg.lstsq(a, b, rcond=None)[0]
    return c, float(np.linalg.norm(pts[0] - c))


def minimal_enclosing_sphere(points: np.ndarray, seed: int = 0) -> tuple[np.ndarray, float]:
    """Exact minimal enclosing sphere of a point set (randomized incremental
    Welzl with move-to-front levels)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("need at least one point")
    rng = np.random.default_rng(seed)
    p = points[rng.permutation(len(points))]
    eps = 1e-12 * (1.0 + float(np.abs(p).max()))

    def first_outside(c, r, lo, hi):
        while lo < hi:            # chunked scan keeps the common case vectorized
            end = min(hi, lo + 4096)
            d2 = np.einsum("ij,ij->i", p[lo:end] - c, p[lo:end] - c)
            out = np.nonzero(d2 > (r + eps) ** 2)[0]
            if len(out):
                return lo + int(out[0])
            lo = end
        return -1

    def with_boundary(boundary: list[np.ndarray], hi: int):
        # smallest sphere containing p[:hi] with ``boundary`` points on it
        c, r = _circumsphere(np.array(boundary))
        if len(boundary) == 4:
            return c, r
        j = first_outside(c, r, 0, hi)
        while j >= 0:
            c, r = with_boundary(boundary + [p[j]], j)
            j = first_outside(c, r, j + 1, hi)
        return c, r

    c, r = _circumsphere(p[:1])
    i = first_outside(c, r, 1, len(p))
    while i >= 0:
        c, r = with_boundary([p[i]], i)
        i = first_outside(c, r, i + 1, len(p))
    return c, r


def normalize_pair(reference: TriangleMesh, reconstructed: TriangleMesh
                   ) -> tuple[TriangleMesh, TriangleMesh, dict]:
    """Similarity transform fitting the reference into the unit sphere, applied
    to both meshes; returns (reference', reconstructed', transform)."""
    if reference.n_vertices == 0:
        raise ValueError("reference mesh is empty")
    center, radius = minimal_enclosing_sphere(reference.vertices)
    if radius <= 0:
        radius = 1.0
    scale = 1.0 / radius
    transform = {"translation": (-center).tolist(), "scale": scale}
    return (reference.transformed(scale, -center),
            reconstructed.transformed(scale, -center) if reconstructed.n_vertices else reconstructed,
            transform)


# ---------------------------------------------------------------------------
# metrics


def precision_recall(recon_points: np.ndarray, ref_points: np.ndarray,
                     recon_mesh: TriangleMesh, ref_mesh: TriangleMesh,
                     threshold: float = DEFAULT_THRESHOLD) -> tuple[float, float]:
    """Point-to-mesh fractions below the threshold (precision, recall)."""
    if len(recon_points) == 0 or recon_mesh.n_triangles == 0:
        p = 0.0
    else:
        d, _ = Bvh(ref_mesh.vertices, ref_mesh.triangles).closest_point(recon_points) \
            if ref_mesh.n_triangles else (np.full(len(recon_points), np.inf), None)
        p = float((d < threshold).mean())
    if len(ref_points) == 0 or ref_mesh.n_triangles == 0:
        r = 0.0
    else:
        if recon_mesh.n_triangles == 0:
            r = 0.0
        else:
            d, _ = Bvh(recon_mesh.vertices, recon_mesh.triangles).closest_point(ref_points)
            r = float((d < threshold).mean())
    return p, r


def f_score(p: float, r: float) -> float:
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise ValueError(f"precision/recall must lie in [0, 1], got {p}, {r}")
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def recall_visible(ref_points: np.ndarray, ref_source_tri: np.ndarray,
                   ref_mesh: TriangleMesh, recon_mesh: TriangleMesh,
                   threshold: float = DEFAULT_THRESHOLD) -> float | None:
    """Recall restricted to reference samples from visible-flagged triangles.

    Returns None (reported as absent) when no sample lies on the visible part.
    """
    if ref_mesh.visible is None:
        raise ValueError("reference mesh carries no visibility flags")
    sel = ref_mesh.visible[ref_source_tri]
    if not sel.any():
        return None
    if recon_mesh.n_triangles == 0:
        return 0.0
    d, _ = Bvh(recon_mesh.vertices, recon_mesh.triangles).closest_point(ref_points[sel])
    return float((d < threshold).mean())


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f_score: float
    visible_recall: float | None
    threshold: float
    spacing: float
    n_recon_samples: int
    n_ref_samples: int
    n_ref_visible_samples: int

    def __post_init__(self):
        for name in ("precision", "recall", "f_score"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} out of [0, 1]: {v}")
        expected = f_score(self.precision, self.recall)
        if abs(self.f_score - expected) > 1e-9:
            raise ValueError("f_score is not the harmonic mean of precision and recall")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)
