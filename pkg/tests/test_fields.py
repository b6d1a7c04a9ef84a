import math

import numpy as np
import pytest
import torch

from conftest import fd_gradient, param_fd_check
from nsdf.fields import (
    AnalyticSdf,
    RadianceField,
    RadianceSpec,
    SdfField,
    SdfSpec,
    init_geometric,
    load_parameter_vector,
    parameter_vector,
    positional_encode,
)


# ---------------------------------------------------------------------------
# positional encoding


def test_encode_zero_input():
    out = positional_encode(torch.zeros(1, 3, dtype=torch.float64), 2)
    assert out.shape == (1, 3 * (1 + 2 * 2))
    assert torch.all(out[0, :3] == 0)
    # sin/cos pairs alternate per level
    assert torch.all(out[0, 3:6] == 0)          # sin(0)
    assert torch.all(out[0, 6:9] == 1)          # cos(0)
    assert torch.all(out[0, 9:12] == 0)
    assert torch.all(out[0, 12:15] == 1)


def test_encode_quarter_period():
    p = torch.tensor([[math.pi / 2, 0.0, 0.0]], dtype=torch.float64)
    out = positional_encode(p, 1)
    assert out[0, 3] == pytest.approx(1.0)      # sin(pi/2)
    assert out[0, 6] == pytest.approx(0.0, abs=1e-12)


def test_encode_matches_scalar_oracle(rng):
    p = rng.normal(size=(5, 3))
    levels = 4
    out = positional_encode(torch.from_numpy(p), levels).numpy()
    for i in range(5):
        expected = list(p[i])
        for k in range(levels):
            expected.extend(math.sin(2.0**k * p[i][a]) for a in range(3))
            expected.extend(math.cos(2.0**k * p[i][a]) for a in range(3))
        np.testing.assert_allclose(out[i], expected, atol=1e-12)


def test_encode_rejects_negative_levels():
    with pytest.raises(ValueError):
        positional_encode(torch.zeros(1, 3), -1)


# ---------------------------------------------------------------------------
# evaluation + geometric initialization


@pytest.fixture(scope="module")
def sphere_field():
    field = SdfField(rng=np.random.default_rng(3))
    return init_geometric(field, 0.5, rng=np.random.default_rng(4))


def test_sdf_eval_sphere_init(sphere_field):
    with torch.no_grad():
        at_origin = float(sphere_field.sdf(torch.zeros(1, 3, dtype=torch.float64)))
        on_surface = float(sphere_field.sdf(torch.tensor([[0.5, 0.0, 0.0]], dtype=torch.float64)))
    assert at_origin == pytest.approx(-0.5, abs=0.06)
    assert abs(on_surface) < 0.06


def test_sdf_eval_deterministic(sphere_field, rng):
    p = torch.from_numpy(rng.normal(size=(32, 3)))
    with torch.no_grad():
        a_sdf, a_feat = sphere_field(p)
        b_sdf, b_feat = sphere_field(p)
    assert torch.equal(a_sdf, b_sdf) and torch.equal(a_feat, b_feat)
    assert a_feat.shape == (32, sphere_field.spec.feature_dim)
    assert torch.isfinite(a_sdf).all() and torch.isfinite(a_feat).all()


def test_init_geometric_signs(sphere_field, rng):
    dirs = rng.normal(size=(1000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    with torch.no_grad():
        inner = sphere_field.sdf(torch.from_numpy(0.25 * dirs)).numpy()
        outer = sphere_field.sdf(torch.from_numpy(1.0 * dirs)).numpy()
    assert (inner < 0).mean() >= 0.99
    assert (outer > 0).mean() >= 0.99


def test_init_geometric_level_set_bisection(sphere_field, rng):
    dirs = rng.normal(size=(100, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def f(t, d):
        with torch.no_grad():
            return float(sphere_field.sdf(torch.from_numpy(t * d[None, :])))

    for d in dirs:
        lo, hi = 0.05, 1.5
        assert f(lo, d) < 0 < f(hi, d)
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if f(mid, d) < 0:
                lo = mid
            else:
                hi = mid
        assert abs(0.5 * (lo + hi) - 0.5) < 0.1


def test_init_geometric_rejects_bad_radius():
    field = SdfField(rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        init_geometric(field, 0.0)


# ---------------------------------------------------------------------------
# spatial gradients


def test_spatial_gradient_analytic_sphere():
    sph = AnalyticSdf.sphere(0.5)
    g = sph.spatial_gradient(torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64))
    np.testing.assert_allclose(g.numpy(), [[1.0, 0.0, 0.0]], atol=1e-12)


def test_spatial_gradient_matches_fd(tiny_sdf, rng):
    pts = torch.from_numpy(rng.normal(size=(16, 3)) * 0.5)
    grad = tiny_sdf.spatial_gradient(pts).detach().numpy()
    h = 1e-4
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        with torch.no_grad():
            fp = tiny_sdf.sdf(pts + torch.from_numpy(e)).numpy()
            fm = tiny_sdf.sdf(pts - torch.from_numpy(e)).numpy()
        fd = (fp - fm) / (2 * h)
        np.testing.assert_allclose(grad[:, a], fd, rtol=1e-3, atol=1e-6)


def test_eikonal_double_backprop_matches_fd(tiny_sdf, rng):
    pts = torch.from_numpy(rng.normal(size=(8, 3)) * 0.4)

    def loss_fn():
        g = tiny_sdf.spatial_gradient(pts)
        return ((torch.linalg.norm(g, dim=-1) - 1.0) ** 2).mean()

    param_fd_check(loss_fn, [tiny_sdf], rng, n_probe=24, h=1e-5)


def test_sdf_output_param_gradients_match_fd(tiny_sdf, rng):
    pts = torch.from_numpy(rng.normal(size=(8, 3)) * 0.4)

    def loss_fn():
        sdf, feat = tiny_sdf(pts)
        return (sdf**2).mean() + (feat.sum(dim=-1) ** 2).mean()

    param_fd_check(loss_fn, [tiny_sdf], rng)


def test_radiance_bounded_and_grad(tiny_sdf, tiny_radiance, rng):
    pts = torch.from_numpy(rng.normal(size=(8, 3)) * 0.4)
    v = torch.from_numpy(rng.normal(size=(8, 3)))
    v = v / torch.linalg.norm(v, dim=-1, keepdim=True)

    def loss_fn():
        sdf, feat, grad = tiny_sdf.with_gradient(pts)
        rgb = tiny_radiance(pts, v, grad, feat)
        return (rgb**2).sum()

    rgb = tiny_radiance(pts, v, torch.zeros_like(pts), torch.zeros(8, 4, dtype=torch.float64))
    assert torch.all(rgb >= 0) and torch.all(rgb <= 1)
    param_fd_check(loss_fn, [tiny_sdf, tiny_radiance], rng, n_probe=24, h=1e-5)


def test_with_detached_gradient_matches_with_gradient(tiny_sdf, rng):
    pts = torch.from_numpy(rng.normal(size=(8, 3)) * 0.4)
    s1, f1, g1 = tiny_sdf.with_gradient(pts)
    s2, f2, g2 = tiny_sdf.with_detached_gradient(pts)
    assert torch.allclose(s1, s2) and torch.allclose(f1, f2)
    assert torch.allclose(g1, g2)
    assert not g2.requires_grad


# ---------------------------------------------------------------------------
# parameter vector round trip


def test_parameter_vector_roundtrip(tiny_sdf, tiny_radiance):
    vec = parameter_vector(tiny_sdf, tiny_radiance)
    perturbed = vec + 0.5
    load_parameter_vector(perturbed, tiny_sdf, tiny_radiance)
    assert torch.equal(parameter_vector(tiny_sdf, tiny_radiance), perturbed)
    with pytest.raises(ValueError):
        load_parameter_vector(vec[:-1], tiny_sdf, tiny_radiance)
