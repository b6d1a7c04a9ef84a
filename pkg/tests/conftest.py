import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_sdf():
    """Small double-precision SDF network for gradient checks."""
    from nsdf.fields import SdfField, SdfSpec

    spec = SdfSpec(hidden=(16, 16), feature_dim=4, encoding_levels=2)
    return SdfField(spec, rng=np.random.default_rng(7))


@pytest.fixture
def tiny_radiance():
    from nsdf.fields import RadianceField, RadianceSpec

    spec = RadianceSpec(hidden=(16, 16), feature_dim=4, dir_encoding_levels=2)
    return RadianceField(spec, rng=np.random.default_rng(8))


def fd_gradient(fn, vec: torch.Tensor, indices, h: float = 1e-6) -> torch.Tensor:
    """Central finite differences of a scalar function of a flat vector."""
    out = []
    for i in indices:
        vp = vec.clone()
        vp[i] += h
        vm = vec.clone()
        vm[i] -= h
        out.append((fn(vp) - fn(vm)) / (2.0 * h))
    return torch.tensor(out, dtype=torch.float64)


def param_fd_check(loss_fn, modules, rng, n_probe=32, h=1e-6, rtol=1e-3):
    """Compare autograd parameter gradients against central differences."""
    from nsdf.fields import load_parameter_vector, parameter_vector

    for m in modules:
        for p in m.parameters():
            p.grad = None
    loss = loss_fn()
    loss.backward()
    grad = torch.cat([p.grad.reshape(-1) if p.grad is not None
                      else torch.zeros_like(p).reshape(-1)
                      for m in modules for p in m.parameters()])
    vec0 = parameter_vector(*modules)
    idx = rng.choice(len(vec0), size=min(n_probe, len(vec0)), replace=False)

    def eval_at(v):
        load_parameter_vector(v, *modules)
        with torch.no_grad():
            pass
        out = float(loss_fn().detach())
        return out

    fd = fd_gradient(eval_at, vec0, idx, h=h)
    load_parameter_vector(vec0, *modules)
    auto = grad[idx]
    scale = auto.abs().clamp_min(1e-4)
    err = (auto - fd).abs() / scale
    assert float(err.max()) < rtol, f"max rel grad error {float(err.max()):.2e}"
    return float(err.max())
