import itertools

import numpy as np
import pytest
from scipy.spatial import cKDTree

from nsdf.fields import AnalyticSdf
from nsdf.geom import (
    Bvh,
    TriangleMesh,
    extract_mesh,
    f_score,
    minimal_enclosing_sphere,
    normalize_pair,
    precision_recall,
    resample_surface,
)
from nsdf.geom.kernels import brute_closest_point
from nsdf.geom.sampling import sample_on_triangles


@pytest.fixture(scope="module")
def sphere_mesh():
    return extract_mesh(AnalyticSdf.sphere(0.5), 48)


# ---------------------------------------------------------------------------
# minimal enclosing sphere


def brute_force_mes(points):
    """O(n^4) oracle: smallest sphere over all 1/2/3/4-point support sets."""
    from nsdf.geom.metrics import _circumsphere

    n = len(points)
    best = None
    for k in (1, 2, 3, 4):
        for combo in itertools.combinations(range(n), k):
            c, r = _circumsphere(points[list(combo)])
            if np.all(np.linalg.norm(points - c, axis=1) <= r + 1e-9):
                if best is None or r < best[1]:
                    best = (c, r)
    return best


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_mes_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(rng.integers(4, 13), 3))
    c_ref, r_ref = brute_force_mes(pts)
    c, r = minimal_enclosing_sphere(pts)
    assert r == pytest.approx(r_ref, rel=1e-7)
    np.testing.assert_allclose(c, c_ref, atol=1e-6 * (1 + r_ref))


def test_mes_contains_all_points(rng):
    pts = rng.normal(size=(5000, 3)) * np.array([2.0, 1.0, 0.5])
    c, r = minimal_enclosing_sphere(pts)
    d = np.linalg.norm(pts - c, axis=1)
    assert d.max() <= r + 1e-9
    assert (np.abs(d - r) < 1e-7).sum() >= 2  # supported by boundary points


# ---------------------------------------------------------------------------
# normalization


def test_normalize_unit_reference(sphere_mesh):
    ref, recon, transform = normalize_pair(sphere_mesh, sphere_mesh)
    assert np.linalg.norm(ref.vertices, axis=1).max() == pytest.approx(1.0, abs=1e-6)


def test_normalize_recovers_applied_transform(sphere_mesh):
    moved = TriangleMesh(sphere_mesh.vertices * 5.0 + np.array([1.0, -2.0, 0.5]),
                         sphere_mesh.triangles)
    ref_n, _, transform = normalize_pair(moved, moved)
    c0, r0 = minimal_enclosing_sphere(sphere_mesh.vertices)
    assert transform["scale"] == pytest.approx(1.0 / (5.0 * r0), rel=1e-9)
    np.testing.assert_allclose(transform["translation"],
                               -(np.asarray(c0) * 5.0 + [1.0, -2.0, 0.5]), atol=1e-7)


def test_normalize_identity_when_already_unit(sphere_mesh):
    ref0, _, _ = normalize_pair(sphere_mesh, sphere_mesh)
    ref1, _, transform = normalize_pair(ref0, ref0)
    assert transform["scale"] == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(transform["translation"], 0.0, atol=1e-9)


def test_normalize_rejects_empty():
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(ValueError):
        normalize_pair(empty, empty)


# ---------------------------------------------------------------------------
# resampling


def test_resample_square_density(rng):
    square = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]),
                          np.array([[0, 1, 2], [0, 2, 3]]))
    samples = resample_surface(square, 0.1, rng)
    assert 50 <= len(samples) <= 200
    d, _ = cKDTree(samples.points).query(samples.points, k=2)
    assert d[:, 1].min() >= 0.1 - 1e-12


def test_resample_huge_spacing_keeps_one(rng):
    tri = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    samples = resample_surface(tri, 100.0, rng)
    assert len(samples) >= 1


def test_resample_double_spacing_quarters_count(rng):
    square = TriangleMesh(np.array([[0.0, 0, 0], [2, 0, 0], [2, 2, 0], [0, 2, 0]]),
                          np.array([[0, 1, 2], [0, 2, 3]]))
    n_fine = len(resample_surface(square, 0.05, np.random.default_rng(0)))
    n_coarse = len(resample_surface(square, 0.1, np.random.default_rng(0)))
    assert 3.0 <= n_fine / n_coarse <= 5.0


def test_resample_median_gap(sphere_mesh, rng):
    samples = resample_surface(sphere_mesh, 0.05, rng)
    d, _ = cKDTree(samples.points).query(samples.points, k=2)
    assert np.median(d[:, 1]) <= 2 * 0.05


def test_resample_source_triangles(sphere_mesh, rng):
    samples = resample_surface(sphere_mesh, 0.08, rng)
    v0, v1, v2 = sphere_mesh.corners()
    a, e0, e1 = v0[samples.source_triangle], (v1 - v0)[samples.source_triangle], \
        (v2 - v0)[samples.source_triangle]
    from nsdf.geom.kernels import point_triangle_dist2

    d2 = point_triangle_dist2(samples.points, a, e0, e1)
    assert d2.max() < 1e-20  # each sample lies on its source triangle


def test_area_weighted_candidates(rng):
    # two triangles, one 9x the area: sample counts follow the areas
    mesh = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0],
                                  [10.0, 0, 0], [13, 0, 0], [10, 3, 0]]),
                        np.array([[0, 1, 2], [3, 4, 5]]))
    _, tri = sample_on_triangles(mesh, 20000, rng)
    frac = (tri == 1).mean()
    assert abs(frac - 0.9) < 0.02


# ---------------------------------------------------------------------------
# precision / recall / F-score


def test_self_comparison_perfect(sphere_mesh, rng):
    ref_n, recon_n, _ = normalize_pair(sphere_mesh, sphere_mesh)
    s = resample_surface(ref_n, 0.02, rng)
    p, r = precision_recall(s.points, s.points, recon_n, ref_n, 0.02)
    assert p == 1.0 and r == 1.0
    assert f_score(p, r) == 1.0


def test_translated_sphere_scores_low(rng):
    # a radius-0.4 sphere translated by 0.05 in world units; normalization by
    # the reference radius turns that into offset d = 0.125 on the unit sphere
    base = extract_mesh(AnalyticSdf.sphere(0.4), 48)
    moved = TriangleMesh(base.vertices + np.array([0.0, 0.0, 0.05]), base.triangles)
    ref_n, rec_n, transform = normalize_pair(base, moved)
    s_ref = resample_surface(ref_n, 0.01, rng)
    s_rec = resample_surface(rec_n, 0.01, rng)
    tau = 0.02
    p, r = precision_recall(s_rec.points, s_ref.points, rec_n, ref_n, tau)

    # analytic sphere-to-sphere oracle: a point at angle theta from the offset
    # axis sits at distance |sqrt(1 + 2 d cos + d^2) - 1| from the other sphere;
    # cos(theta) is uniform on the sphere
    d = 0.05 * transform["scale"]
    c_hi = ((1 + tau) ** 2 - 1 - d * d) / (2 * d)
    c_lo = ((1 - tau) ** 2 - 1 - d * d) / (2 * d)
    expected = (min(1.0, c_hi) - max(-1.0, c_lo)) / 2.0
    assert expected < 0.2
    assert p == pytest.approx(expected, abs=0.02)
    assert r == pytest.approx(expected, abs=0.02)
    assert p < 0.2 and r < 0.2


def test_precision_recall_matches_brute_force(rng):
    recon = extract_mesh(AnalyticSdf.sphere(0.45), 12)
    ref = extract_mesh(AnalyticSdf.sphere(0.5), 12)
    assert max(recon.n_triangles, ref.n_triangles) <= 500
    pts_rec = rng.normal(size=(100, 3)) * 0.5
    pts_ref = rng.normal(size=(100, 3)) * 0.5
    for thr in (0.02, 0.05, 0.2):
        p, r = precision_recall(pts_rec, pts_ref, recon, ref, thr)
        v0, v1, v2 = ref.corners()
        d_rec, _ = brute_closest_point(pts_rec, v0, v1 - v0, v2 - v0)
        w0, w1, w2 = recon.corners()
        d_ref, _ = brute_closest_point(pts_ref, w0, w1 - w0, w2 - w0)
        assert p == (d_rec < thr).mean()
        assert r == (d_ref < thr).mean()


def test_threshold_monotonicity(rng):
    recon = extract_mesh(AnalyticSdf.sphere(0.45), 16)
    ref = extract_mesh(AnalyticSdf.sphere(0.5), 16)
    s_rec = resample_surface(recon, 0.05, rng)
    s_ref = resample_surface(ref, 0.05, rng)
    prev_p = prev_r = -1.0
    for thr in (0.01, 0.02, 0.05, 0.1, 0.3):
        p, r = precision_recall(s_rec.points, s_ref.points, recon, ref, thr)
        assert p >= prev_p and r >= prev_r
        prev_p, prev_r = p, r


def test_metric_symmetry(rng):
    a = extract_mesh(AnalyticSdf.sphere(0.45), 16)
    b = extract_mesh(AnalyticSdf.sphere(0.5), 16)
    s_a = resample_surface(a, 0.05, np.random.default_rng(1))
    s_b = resample_surface(b, 0.05, np.random.default_rng(2))
    p_ab, r_ab = precision_recall(s_a.points, s_b.points, a, b, 0.04)
    p_ba, r_ba = precision_recall(s_b.points, s_a.points, b, a, 0.04)
    assert p_ab == r_ba and r_ab == p_ba


def test_transform_invariance(rng):
    recon = extract_mesh(AnalyticSdf.sphere(0.45), 20)
    ref = extract_mesh(AnalyticSdf.sphere(0.5), 20)

    def metrics(ref_mesh, recon_mesh):
        ref_n, recon_n, _ = normalize_pair(ref_mesh, recon_mesh)
        s_rec = resample_surface(recon_n, 0.03, np.random.default_rng(5))
        s_ref = resample_surface(ref_n, 0.03, np.random.default_rng(6))
        return precision_recall(s_rec.points, s_ref.points, recon_n, ref_n, 0.05)

    base = metrics(ref, recon)
    from nsdf.render import random_rotation

    R = random_rotation(np.random.default_rng(3))
    t = np.array([5.0, -2.0, 1.0])
    ref_m = TriangleMesh(ref.vertices @ R.T * 3.0 + t, ref.triangles)
    recon_m = TriangleMesh(recon.vertices @ R.T * 3.0 + t, recon.triangles)
    moved = metrics(ref_m, recon_m)
    assert base[0] == pytest.approx(moved[0], abs=1e-6)
    assert base[1] == pytest.approx(moved[1], abs=1e-6)


def test_f_score_values():
    assert f_score(1.0, 1.0) == 1.0
    assert f_score(0.5, 1.0) == pytest.approx(2.0 / 3.0)
    assert f_score(0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        f_score(1.5, 0.5)
