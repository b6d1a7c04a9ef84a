import math

import numpy as np
import pytest
import torch

from nsdf.fields import AnalyticSdf, SdfField, SdfSpec
from nsdf.losses import (
    LossParts,
    LossWeights,
    NonFiniteLoss,
    SdsInjection,
    eikonal_loss,
    eikonal_sample_points,
    mask_loss,
    photometric_loss,
    total_loss,
)


def test_weights_validation():
    LossWeights(beta=0.0, lam=0.0, gamma=0.0, gamma_n=0.0)
    with pytest.raises(ValueError):
        LossWeights(beta=-0.1)
    with pytest.raises(ValueError):
        LossWeights(lam=float("nan"))


# ---------------------------------------------------------------------------
# photometric


def test_photometric_identical_is_zero(rng):
    img = torch.from_numpy(rng.random((32, 3)))
    assert float(photometric_loss(img, img)) == 0.0


def test_photometric_black_vs_white():
    black = torch.zeros(16, 3, dtype=torch.float64)
    white = torch.ones(16, 3, dtype=torch.float64)
    assert float(photometric_loss(black, white)) == pytest.approx(3.0)


def test_photometric_matches_resummation(rng):
    a = torch.from_numpy(rng.random((64, 3)))
    b = torch.from_numpy(rng.random((64, 3)))
    manual = np.mean([np.abs(a[i].numpy() - b[i].numpy()).sum() for i in range(64)])
    assert float(photometric_loss(a, b)) == pytest.approx(manual, rel=1e-12)


def test_photometric_rejects_empty():
    with pytest.raises(ValueError):
        photometric_loss(torch.zeros(0, 3), torch.zeros(0, 3))


# ---------------------------------------------------------------------------
# mask


def test_mask_perfect_prediction():
    m = torch.tensor([0.0, 1.0, 1.0, 0.0], dtype=torch.float64)
    loss = float(mask_loss(m.clone(), m))
    assert loss <= -math.log(1 - 1e-5) + 1e-12


def test_mask_half_confidence():
    loss = mask_loss(torch.tensor([0.5], dtype=torch.float64),
                     torch.tensor([1.0], dtype=torch.float64))
    assert float(loss) == pytest.approx(math.log(2.0), rel=1e-12)


def test_mask_matches_scalar_bce(rng):
    a = torch.from_numpy(rng.random(64))
    m = torch.from_numpy(rng.random(64))
    eps = 1e-5
    manual = float(np.mean([-(mi * math.log(min(max(ai, eps), 1 - eps))
                             + (1 - mi) * math.log(1 - min(max(ai, eps), 1 - eps)))
                            for ai, mi in zip(a.numpy(), m.numpy())]))
    assert float(mask_loss(a, m)) == pytest.approx(manual, rel=1e-10)


# ---------------------------------------------------------------------------
# eikonal


def test_eikonal_exact_sphere_is_zero(rng):
    sph = AnalyticSdf.sphere(0.5)
    pts = torch.from_numpy(rng.normal(size=(128, 3)))
    pts = pts[torch.linalg.norm(pts, dim=-1) > 0.1]
    assert float(eikonal_loss(sph, pts)) < 1e-10


def test_eikonal_scaled_field_is_one(rng):
    sph = AnalyticSdf.sphere(0.5)
    doubled = AnalyticSdf(lambda p: 2.0 * sph.fn(p), lambda p: 2.0 * sph.grad_fn(p))
    pts = torch.from_numpy(rng.normal(size=(64, 3)) + 0.2)
    assert float(eikonal_loss(doubled, pts)) == pytest.approx(1.0, rel=1e-9)


def test_eikonal_matches_fd_norm_oracle(rng):
    field = SdfField(SdfSpec(hidden=(16, 16), feature_dim=4, encoding_levels=2),
                     rng=np.random.default_rng(5))
    pts = rng.normal(size=(16, 3)) * 0.4
    h = 1e-4
    norms = []
    for p in pts:
        g = []
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            with torch.no_grad():
                fp = float(field.sdf(torch.from_numpy((p + e)[None, :])))
                fm = float(field.sdf(torch.from_numpy((p - e)[None, :])))
            g.append((fp - fm) / (2 * h))
        norms.append(np.linalg.norm(g))
    manual = float(np.mean((np.array(norms) - 1.0) ** 2))
    ours = float(eikonal_loss(field, torch.from_numpy(pts)))
    assert ours == pytest.approx(manual, rel=1e-3)


def test_eikonal_sample_points_shapes(rng):
    pts = eikonal_sample_points(rng, 64, 1.0)
    assert pts.shape == (64, 3)
    ray_pts = torch.from_numpy(rng.normal(size=(10, 5, 3)))
    pts = eikonal_sample_points(rng, 64, 1.0, ray_pts)
    assert pts.shape == (64, 3)


# ---------------------------------------------------------------------------
# total loss


def test_total_reduces_to_neus_when_sds_off():
    parts = LossParts(color=torch.tensor(0.5), mask=torch.tensor(0.25),
                      eikonal=torch.tensor(0.1))
    w = LossWeights(beta=0.1, lam=0.2, gamma=0.0, gamma_n=0.0)
    out = total_loss(parts, w)
    assert out.value == pytest.approx(0.5 + 0.1 * 0.25 + 0.2 * 0.1)


def test_total_zero_when_unweighted_and_matching():
    parts = LossParts(color=torch.tensor(0.0))
    out = total_loss(parts, LossWeights(beta=0.0, lam=0.0, gamma=0.0, gamma_n=0.0))
    assert out.value == 0.0


def test_injected_gradient_chain_rule():
    # 2-parameter toy field: image x = A theta, injected gradient g
    theta = torch.tensor([0.7, -0.3], dtype=torch.float64, requires_grad=True)
    A = torch.tensor([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]], dtype=torch.float64)
    x = A @ theta
    g = torch.tensor([0.2, -0.5, 1.0], dtype=torch.float64)
    gamma = 1e-3
    out = total_loss(LossParts(), LossWeights(),
                     [SdsInjection(node=x, gradient=g, weight=gamma)])
    out.backward_tensor.backward()
    expected = gamma * (A.T @ g)
    np.testing.assert_allclose(theta.grad.numpy(), expected.numpy(), rtol=1e-12)
    assert out.value == 0.0  # injections carry no scalar


def test_ablation_zeroing_removes_term_gradient():
    theta = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)

    def parts():
        return LossParts(color=(theta**2).sum(), mask=(theta**4).sum(),
                         eikonal=(theta**6).sum())

    grads = {}
    for beta in (0.0, 0.1):
        if theta.grad is not None:
            theta.grad = None
        out = total_loss(parts(), LossWeights(beta=beta, lam=0.0))
        out.backward_tensor.backward()
        grads[beta] = theta.grad.clone()
    diff = grads[0.1] - grads[0.0]
    expected = 0.1 * 4 * theta.detach()**3
    np.testing.assert_allclose(diff.numpy(), expected.numpy(), rtol=1e-12)


def test_gradient_linearity(rng):
    theta = torch.tensor(rng.normal(size=3), dtype=torch.float64, requires_grad=True)

    def color():
        return (theta**2).sum()

    def mask():
        return (theta**4).sum()

    def eik():
        return (torch.sin(theta) ** 2).sum()

    per_term = {}
    for name, fn in (("color", color), ("mask", mask), ("eik", eik)):
        theta.grad = None
        fn().backward()
        per_term[name] = theta.grad.clone()
    beta, lam = 0.3, 0.7
    theta.grad = None
    out = total_loss(LossParts(color=color(), mask=mask(), eikonal=eik()),
                     LossWeights(beta=beta, lam=lam))
    out.backward_tensor.backward()
    expected = per_term["color"] + beta * per_term["mask"] + lam * per_term["eik"]
    np.testing.assert_allclose(theta.grad.numpy(), expected.numpy(), atol=1e-10)


def test_nan_part_aborts():
    with pytest.raises(NonFiniteLoss, match="color"):
        total_loss(LossParts(color=torch.tensor(float("nan"))), LossWeights())
    with pytest.raises(NonFiniteLoss, match="sds"):
        total_loss(LossParts(), LossWeights(),
                   [SdsInjection(node=torch.zeros(2), gradient=torch.full((2,), float("inf")),
                                 weight=1.0)])


def test_losses_nonnegative(rng):
    a = torch.from_numpy(rng.random((16, 3)))
    b = torch.from_numpy(rng.random((16, 3)))
    assert float(photometric_loss(a, b)) >= 0
    assert float(mask_loss(torch.from_numpy(rng.random(16)),
                           torch.from_numpy(rng.random(16)))) >= 0
