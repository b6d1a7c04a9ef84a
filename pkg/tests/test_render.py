import numpy as np
import pytest
import torch

from conftest import param_fd_check
from nsdf.cameras import Camera, all_pixels, generate_rays, look_at, pinhole_intrinsics, \
    sphere_interval
from nsdf.fields import AnalyticSdf, RadianceField, RadianceSpec, SdfField, SdfSpec, \
    init_geometric
from nsdf.render import SamplingSpec, SScale, neus_weights, normals_to_rgb, random_rotation, \
    render_rays, rgb_to_normals, rotate_normals


class ConstantRadiance:
    def __init__(self, rgb=(1.0, 1.0, 1.0)):
        self.rgb = rgb

    def __call__(self, p, v, n, feat):
        return torch.ones(p.shape[0], 3, dtype=p.dtype) * torch.tensor(self.rgb, dtype=p.dtype)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def quadrature_reference(sdf_np, color_np, origin, direction, near, far, n, s, bg):
    """Independent dense-quadrature oracle (NumPy, boundary-sample formulation)."""
    l = np.linspace(near, far, n)
    pts = origin[None, :] + l[:, None] * direction[None, :]
    f = sdf_np(pts)
    phi = sigmoid(s * f)
    alpha = np.clip((phi[:-1] - phi[1:]) / phi[:-1], 0.0, 1.0)
    trans = np.cumprod(np.concatenate([[1.0], 1.0 - alpha]))[:-1]
    w = alpha * trans
    colors = color_np(pts[:-1])
    out = (w[:, None] * colors).sum(axis=0) + (1.0 - w.sum()) * np.asarray(bg)
    return out, w


# ---------------------------------------------------------------------------
# ray generation


def test_center_pixel_looks_down_minus_z():
    cam = Camera("pinhole", np.eye(4), 17, 17, pinhole_intrinsics(60, 17, 17))
    rays = generate_rays(cam, np.array([[8, 8]]), bound_radius=10.0)
    np.testing.assert_allclose(rays.dirs[0], [0, 0, -1], atol=1e-12)
    np.testing.assert_allclose(rays.origins[0], [0, 0, 0], atol=1e-12)


def test_orthographic_rays_parallel():
    cam = Camera("orthographic", look_at((0, 0, 2)), 8, 8, extent=np.array([2.0, 2.0]))
    rays = generate_rays(cam, all_pixels(cam), bound_radius=5.0)
    assert np.allclose(rays.dirs, rays.dirs[0])
    assert len(np.unique(rays.origins, axis=0)) == 64


def test_corner_pixel_90deg_fov():
    w = h = 16
    cam = Camera("pinhole", np.eye(4), w, h, pinhole_intrinsics(90, w, h))
    rays = generate_rays(cam, np.array([[0, 0]]), bound_radius=10.0)
    # hand-computed backprojection: f = w/2, pixel center offset -7.5 pixels
    f = w / 2.0
    d = np.array([(0.5 - w / 2) / f, -(0.5 - h / 2) / f, -1.0])
    d /= np.linalg.norm(d)
    np.testing.assert_allclose(rays.dirs[0], d, atol=1e-12)


def test_out_of_range_pixel_rejected():
    cam = Camera("pinhole", np.eye(4), 8, 8, pinhole_intrinsics(60, 8, 8))
    with pytest.raises(ValueError):
        generate_rays(cam, np.array([[8, 0]]))


def test_sphere_interval_hit_and_miss():
    near, far = sphere_interval(np.array([[0.0, 0, 3.0]]), np.array([[0.0, 0, -1.0]]), 1.0)
    assert near[0] == pytest.approx(2.0) and far[0] == pytest.approx(4.0)
    near, far = sphere_interval(np.array([[0.0, 0, 3.0]]), np.array([[0.0, 0, 1.0]]), 1.0)
    assert near[0] == far[0] == 0.0


def test_camera_validation():
    bad = np.eye(4)
    bad[0, 1] = 0.5
    with pytest.raises(ValueError):
        Camera("pinhole", bad, 8, 8, pinhole_intrinsics(60, 8, 8))
    K = pinhole_intrinsics(60, 8, 8)
    K[0, 0] = -1.0
    with pytest.raises(ValueError):
        Camera("pinhole", np.eye(4), 8, 8, K)


# ---------------------------------------------------------------------------
# weights


def test_weights_constant_positive_sdf():
    sdf = torch.full((4, 33), 0.3, dtype=torch.float64)
    deltas = torch.full((4, 32), 0.05, dtype=torch.float64)
    w = neus_weights(sdf, deltas, torch.tensor(512.0, dtype=torch.float64))
    assert torch.all(w == 0)


def test_weights_concentrate_at_crossing(rng):
    # dense-oracle check: the same construction at 10x sampling localizes the
    # mass at the same depth
    depths = np.linspace(0.0, 2.0, 65)
    sdf_np = 1.0 - depths  # crossing at depth 1
    s = 512.0
    w = neus_weights(torch.from_numpy(sdf_np[None, :]),
                     torch.from_numpy(np.diff(depths)[None, :]), torch.tensor(s)).numpy()[0]
    bracket = np.abs(depths[:-1] - 1.0) < 0.1
    assert w[bracket].sum() >= 0.99

    dense_depths = np.linspace(0.0, 2.0, 641)
    phi = sigmoid(s * (1.0 - dense_depths))
    alpha = np.clip((phi[:-1] - phi[1:]) / phi[:-1], 0, 1)
    w_dense = alpha * np.cumprod(np.concatenate([[1.0], 1 - alpha]))[:-1]
    mass_center = (w_dense * dense_depths[:-1]).sum() / w_dense.sum()
    ours = (w * depths[:-1]).sum() / w.sum()
    assert abs(mass_center - ours) < 0.02


def test_weights_all_negative_clamped():
    # ray starts deep inside and heads out: sdf rises, alphas clamp at 0
    sdf = torch.linspace(-2.0, -0.1, 16, dtype=torch.float64).unsqueeze(0)
    deltas = torch.full((1, 15), 0.1, dtype=torch.float64)
    w = neus_weights(sdf, deltas, torch.tensor(64.0, dtype=torch.float64))
    assert float(w[0, 0]) == 0.0
    assert torch.all(w == 0)


def test_weights_reject_unordered():
    sdf = torch.zeros(1, 4, dtype=torch.float64)
    deltas = torch.tensor([[0.1, -0.1, 0.1]], dtype=torch.float64)
    with pytest.raises(ValueError):
        neus_weights(sdf, deltas, torch.tensor(10.0))


def test_weights_normalization_property(rng):
    for _ in range(20):
        sdf = torch.from_numpy(rng.normal(size=(8, 33)))
        deltas = torch.from_numpy(rng.random((8, 32)) + 1e-3)
        w = neus_weights(sdf, deltas, torch.tensor(float(rng.uniform(1, 500))))
        assert torch.all(w >= 0)
        assert torch.all(w.sum(dim=-1) <= 1.0 + 1e-4)


# ---------------------------------------------------------------------------
# render channels against the dense quadrature oracle


def _sphere_rays(n=12, radius=0.5, seed=5):
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = -2.5 * dirs
    jitter = rng.normal(scale=0.1, size=(n, 3))
    d = dirs + jitter * 0.05
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return origins, d


def _bundle(origins, dirs, bound=1.0):
    from nsdf.cameras import RayBundle

    near, far = sphere_interval(origins, dirs, bound)
    pixels = np.zeros((len(origins), 2), dtype=np.int64)
    return RayBundle(origins=origins, dirs=dirs, pixels=pixels, near=near, far=far)


def test_render_color_constant_white_sphere():
    sph = AnalyticSdf.sphere(0.5)
    rays = _bundle(np.array([[0.0, 0, 2.5]]), np.array([[0.0, 0, -1.0]]))
    out = render_rays(sph, ConstantRadiance(), torch.tensor(512.0), rays,
                      SamplingSpec(perturb=False, bg_color=(0, 0, 0)))
    np.testing.assert_allclose(out.color.numpy(), [[1, 1, 1]], atol=1e-3)
    assert out.opacity[0] > 0.99


def test_render_color_miss_black_background():
    sph = AnalyticSdf.sphere(0.5)
    rays = _bundle(np.array([[2.0, 2.0, 2.5]]), np.array([[0.0, 0, -1.0]]))
    out = render_rays(sph, ConstantRadiance(), torch.tensor(512.0), rays,
                      SamplingSpec(perturb=False, bg_color=(0, 0, 0)))
    np.testing.assert_allclose(out.color.numpy(), [[0, 0, 0]], atol=1e-12)
    assert float(out.opacity[0]) == 0.0


@pytest.mark.parametrize("shape", ["sphere", "plane", "torus"])
def test_render_color_matches_dense_quadrature(shape):
    fields = {
        "sphere": AnalyticSdf.sphere(0.5),
        "plane": AnalyticSdf.plane((0.2, 0.1, 1.0), -0.1),
        "torus": AnalyticSdf.torus(0.5, 0.2),
    }
    field = fields[shape]

    def color_np(pts):
        return 0.5 + 0.4 * np.sin(3.0 * pts)

    class PosRadiance:
        def __call__(self, p, v, n, feat):
            return 0.5 + 0.4 * torch.sin(3.0 * p)

    origins, dirs = _sphere_rays(10)
    rays = _bundle(origins, dirs)
    s = 256.0
    out = render_rays(field, PosRadiance(), torch.tensor(s), rays,
                      SamplingSpec(n_coarse=128, n_importance=128, perturb=False,
                                   bg_color=(1, 1, 1)))
    sdf_np = lambda pts: field.fn(torch.from_numpy(pts)).numpy()
    for i in range(len(rays)):
        if not rays.hits_bound[i]:
            continue
        ref, _ = quadrature_reference(sdf_np, color_np, origins[i], dirs[i],
                                      rays.near[i], rays.far[i], 4096, s, (1, 1, 1))
        np.testing.assert_allclose(out.color[i].numpy(), ref, atol=1e-3)


def test_render_normal_sphere_pole():
    sph = AnalyticSdf.sphere(1.0)
    rays = _bundle(np.array([[0.0, 0.0, 2.5]]), np.array([[0.0, 0.0, -1.0]]), bound=1.2)
    out = render_rays(sph, None, torch.tensor(256.0), rays,
                      SamplingSpec(n_coarse=128, n_importance=128, perturb=False),
                      need_color=False)
    n = out.normal[0].numpy()
    assert np.linalg.norm(n - np.array([0.0, 0.0, 1.0])) < 0.02


def test_render_normal_miss_is_zero():
    sph = AnalyticSdf.sphere(0.5)
    rays = _bundle(np.array([[2.0, 2.0, 2.5]]), np.array([[0.0, 0.0, -1.0]]))
    out = render_rays(sph, None, torch.tensor(256.0), rays, SamplingSpec(perturb=False),
                      need_color=False)
    assert np.all(out.normal.numpy() == 0)


def test_render_normal_plane_parallel(rng):
    n_hat = np.array([0.3, -0.2, 0.93])
    n_hat /= np.linalg.norm(n_hat)
    plane = AnalyticSdf.plane(tuple(n_hat), -0.2)
    origins = np.array([[0.0, 0.0, 2.0], [0.3, 0.1, 2.0]])
    dirs = np.array([[0.0, 0.0, -1.0], [-0.1, 0.0, -0.99]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rays = _bundle(origins, dirs)
    out = render_rays(plane, None, torch.tensor(256.0), rays,
                      SamplingSpec(n_coarse=64, n_importance=64, perturb=False),
                      need_color=False)
    for i in range(2):
        v = out.normal[i].numpy()
        cos = v @ n_hat / np.linalg.norm(v)
        assert cos > 0.99999


def test_render_opacity_opaque_and_monotone():
    sph = AnalyticSdf.sphere(0.5)
    rays = _bundle(np.array([[0.0, 0.0, 2.5]]), np.array([[0.0, 0.0, -1.0]]))
    out = render_rays(sph, None, torch.tensor(256.0), rays,
                      SamplingSpec(n_coarse=128, n_importance=128, perturb=False),
                      need_color=False, need_normal=False)
    assert abs(float(out.opacity[0]) - 1.0) < 1e-2

    # grazing ray: opacity in (0, 1), monotone in s
    graze = _bundle(np.array([[0.499, 0.0, 2.5]]), np.array([[0.0, 0.0, -1.0]]))
    vals = []
    for s in (8.0, 32.0, 128.0):
        o = render_rays(sph, None, torch.tensor(s), graze,
                        SamplingSpec(n_coarse=128, n_importance=128, perturb=False),
                        need_color=False, need_normal=False)
        vals.append(float(o.opacity[0]))
    assert all(0.0 < v < 1.0 for v in vals)
    assert vals[0] < vals[1] < vals[2]


def test_render_empty_scene_opacity_zero():
    far_sphere = AnalyticSdf.sphere(0.01, center=(0, 0, 50.0))
    rays = _bundle(np.array([[0.0, 0.0, 2.5]]), np.array([[0.0, 0.0, -1.0]]))
    out = render_rays(far_sphere, None, torch.tensor(256.0), rays,
                      SamplingSpec(perturb=False), need_color=False, need_normal=False)
    assert float(out.opacity[0]) < 1e-6


def test_quadrature_convergence_halves_error():
    sph = AnalyticSdf.sphere(0.5)
    origins, dirs = _sphere_rays(6, seed=11)
    rays = _bundle(origins, dirs)
    s = 128.0
    sdf_np = lambda pts: sph.fn(torch.from_numpy(pts)).numpy()
    color_np = lambda pts: 0.5 + 0.4 * np.sin(3.0 * pts)

    class PosRadiance:
        def __call__(self, p, v, n, feat):
            return 0.5 + 0.4 * torch.sin(3.0 * p)

    refs = {}
    for i in range(len(rays)):
        if rays.hits_bound[i]:
            refs[i], _ = quadrature_reference(sdf_np, color_np, origins[i], dirs[i],
                                              rays.near[i], rays.far[i], 4096, s, (1, 1, 1))
    errs = []
    for n in (32, 64, 128, 256):
        out = render_rays(sph, PosRadiance(), torch.tensor(s), rays,
                          SamplingSpec(n_coarse=n, n_importance=0, perturb=False,
                                       bg_color=(1, 1, 1)))
        errs.append(max(np.abs(out.color[i].numpy() - refs[i]).max() for i in refs))
    for a, b in zip(errs, errs[1:]):
        assert b <= 0.6 * a + 1e-6, f"convergence stalled: {errs}"


def test_render_color_param_gradients_match_fd(rng):
    spec = SdfSpec(hidden=(8, 8), feature_dim=4, encoding_levels=1)
    sdf = SdfField(spec, rng=np.random.default_rng(2))
    init_geometric(sdf, 0.5, rng=np.random.default_rng(3), fit_steps=20)
    rad = RadianceField(RadianceSpec(hidden=(8,), feature_dim=4, dir_encoding_levels=1),
                        rng=np.random.default_rng(4))
    s = SScale(64.0)
    origins, dirs = _sphere_rays(3, seed=21)
    rays = _bundle(origins, dirs)

    def loss_fn():
        out = render_rays(sdf, rad, s, rays,
                          SamplingSpec(n_coarse=12, n_importance=0, perturb=False),
                          grad_normals=True)
        return (out.color**2).sum() + (out.normal**2).sum() + out.opacity.sum()

    param_fd_check(loss_fn, [sdf, rad, s], rng, n_probe=24, h=1e-5)


# ---------------------------------------------------------------------------
# normal-map post ops


def test_rotate_normals_identity_and_flip(rng):
    nm = torch.from_numpy(rng.normal(size=(4, 4, 3)))
    assert torch.allclose(rotate_normals(nm, torch.eye(3, dtype=torch.float64)), nm)
    flip = torch.tensor([[-1.0, 0, 0], [0, -1.0, 0], [0, 0, 1.0]], dtype=torch.float64)
    out = rotate_normals(nm, flip)
    assert torch.allclose(out[..., 0], -nm[..., 0])
    assert torch.allclose(out[..., 2], nm[..., 2])


def test_rotate_normals_preserves_norm(rng):
    nm = torch.from_numpy(rng.normal(size=(8, 8, 3)))
    for _ in range(5):
        R = torch.from_numpy(random_rotation(rng))
        out = rotate_normals(nm, R)
        np.testing.assert_allclose(torch.linalg.norm(out, dim=-1).numpy(),
                                   torch.linalg.norm(nm, dim=-1).numpy(), atol=1e-6)


def test_rotate_normals_rejects_non_rotation():
    nm = torch.zeros(2, 2, 3)
    with pytest.raises(ValueError):
        rotate_normals(nm, 2.0 * torch.eye(3))
    with pytest.raises(ValueError):
        rotate_normals(nm, torch.diag(torch.tensor([1.0, 1.0, -1.0])))


def test_rotation_composition_equivariance(rng):
    nm = torch.from_numpy(rng.normal(size=(4, 4, 3)))
    r1 = torch.from_numpy(random_rotation(rng))
    r2 = torch.from_numpy(random_rotation(rng))
    a = rotate_normals(rotate_normals(nm, r1), r2)
    b = rotate_normals(nm, r2 @ r1)
    assert torch.allclose(a, b, atol=1e-6)


def test_normals_to_rgb():
    n = torch.tensor([[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]], dtype=torch.float64)
    rgb = normals_to_rgb(n)
    np.testing.assert_allclose(rgb[0, 0].numpy(), [0.5, 0.5, 1.0])
    np.testing.assert_allclose(rgb[0, 1].numpy(), [0.5, 0.5, 0.5])


def test_normals_rgb_roundtrip(rng):
    n = torch.from_numpy(rng.uniform(-1, 1, size=(5, 5, 3)))
    back = rgb_to_normals(normals_to_rgb(n))
    assert torch.allclose(back, n, atol=1e-6)
