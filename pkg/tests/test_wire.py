import json

import numpy as np
import pytest
import requests

from nsdf.sds import DEFAULT_SCHEDULE, DiffusionSchedule, RemoteGuidanceOracle, \
    OracleUnavailable, ToyGaussianOracle
from nsdf.sds import wire
from nsdf.sds.toy_server import ToyOracleServer


@pytest.fixture(scope="module")
def server():
    oracle = ToyGaussianOracle(mean=0.5, cov_scale=0.25)
    with ToyOracleServer(oracle, max_size=256) as srv:
        yield srv


def _request(shape=(8, 8, 3), seed=11):
    rng = np.random.default_rng(3)
    img = rng.random(shape).astype(np.float32)
    return wire.build_request(img, 0.31, "a test prompt", 100.0, noise_seed=seed), img


# ---------------------------------------------------------------------------
# codec


def test_request_roundtrip():
    req, img = _request()
    parsed = wire.parse_request(req)
    np.testing.assert_array_equal(parsed["image"], img)
    assert parsed["timestep"] == pytest.approx(0.31)
    assert parsed["noise_seed"] == 11
    assert parsed["prompt"] == "a test prompt"


def test_response_roundtrip():
    grad = np.random.default_rng(0).normal(size=(4, 4, 3)).astype(np.float32)
    resp = wire.build_response(grad)
    back = wire.parse_response(resp)
    np.testing.assert_array_equal(back, grad)


@pytest.mark.parametrize("field,mutate", [
    ("width", lambda r: r.update(width=-1)),
    ("timestep", lambda r: r.update(timestep=1.5)),
    ("prompt", lambda r: r.update(prompt="")),
    ("cfg_scale", lambda r: r.update(cfg_scale="high")),
    ("noise_seed", lambda r: r.update(noise_seed=1.5)),
    ("grid", lambda r: r.update(grid={"rows": 3, "cols": 2, "active": 0})),
    ("image", lambda r: r.update(image="!!notbase64")),
])
def test_parse_request_rejects_bad_fields(field, mutate):
    req, _ = _request()
    mutate(req)
    with pytest.raises(wire.WireError) as exc:
        wire.parse_request(req)
    assert exc.value.field == field


def test_parse_request_oversize_flag():
    req, _ = _request()
    req["width"] = 4096
    with pytest.raises(wire.WireError) as exc:
        wire.parse_request(req, max_size=1024)
    assert getattr(exc.value, "oversize", False)


def test_payload_length_mismatch():
    req, _ = _request()
    req["width"] = 9  # image bytes no longer match
    with pytest.raises(wire.WireError) as exc:
        wire.parse_request(req)
    assert exc.value.field == "image"


# ---------------------------------------------------------------------------
# toy server over HTTP


def test_health_endpoint(server):
    info = requests.get(server.url + wire.HEALTH_PATH, timeout=10).json()
    assert info["status"] == "ok"
    assert info["model_id"] == "toy-gaussian"
    assert info["schedule_hash"] == DEFAULT_SCHEDULE.hash


def test_gradient_matches_in_process_oracle(server):
    req, img = _request(seed=21)
    resp = requests.post(server.url + wire.GRADIENT_PATH, json=req, timeout=10)
    assert resp.status_code == 200
    grad = wire.parse_response(resp.json())
    local = ToyGaussianOracle(mean=0.5, cov_scale=0.25).gradient_for(
        img.astype(np.float64), 0.31, "a test prompt", 100.0, noise_seed=21)
    np.testing.assert_allclose(grad, local, atol=1e-5)  # float32 wire quantization


def test_seeded_requests_idempotent(server):
    req, _ = _request(seed=33)
    a = requests.post(server.url + wire.GRADIENT_PATH, json=req, timeout=10)
    b = requests.post(server.url + wire.GRADIENT_PATH, json=req, timeout=10)
    assert a.content == b.content


def test_malformed_request_400_names_field(server):
    req, _ = _request()
    req["timestep"] = "soon"
    resp = requests.post(server.url + wire.GRADIENT_PATH, json=req, timeout=10)
    assert resp.status_code == 400
    assert resp.json()["field"] == "timestep"


def test_oversize_request_413(server):
    req, _ = _request()
    req["width"] = 512  # server max_size=256
    resp = requests.post(server.url + wire.GRADIENT_PATH, json=req, timeout=10)
    assert resp.status_code == 413


def test_unknown_path_404(server):
    resp = requests.post(server.url + "/v1/nope", json={}, timeout=10)
    assert resp.status_code == 404


# ---------------------------------------------------------------------------
# remote client


def test_remote_oracle_roundtrip(server):
    oracle = RemoteGuidanceOracle(server.url, timeout=10)
    info = oracle.check_schedule()
    assert info["model_id"] == "toy-gaussian"
    img = np.random.default_rng(5).random((8, 8, 3))
    grad = oracle.gradient_for(img, 0.2, "prompt", 100.0, noise_seed=4)
    local = ToyGaussianOracle(mean=0.5, cov_scale=0.25).gradient_for(
        img, 0.2, "prompt", 100.0, noise_seed=4)
    np.testing.assert_allclose(grad, local, atol=1e-5)


def test_remote_oracle_refuses_schedule_mismatch(server):
    oracle = RemoteGuidanceOracle(server.url, timeout=10,
                                  schedule=DiffusionSchedule(beta_start=2e-3))
    with pytest.raises(OracleUnavailable, match="schedule hash"):
        oracle.check_schedule()


def test_remote_oracle_unreachable():
    oracle = RemoteGuidanceOracle("http://127.0.0.1:1", timeout=0.5)
    with pytest.raises(OracleUnavailable):
        oracle.gradient_for(np.zeros((4, 4, 3)), 0.2, "p", 1.0, noise_seed=0)
