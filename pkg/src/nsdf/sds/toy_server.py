"""Minimal HTTP server exposing the toy Gaussian oracle over the wire protocol.

Runs on the standard library so the training engine stays dependency-light;
used for protocol testing and as a stand-in guidance service.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import wire
from .oracle import ToyGaussianOracle

DEFAULT_MAX_SIZE = 1024


def make_handler(oracle: ToyGaussianOracle, max_size: int = DEFAULT_MAX_SIZE):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _send(self, code: int, payload: dict):
            raw = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def do_GET(self):
            if self.path == wire.HEALTH_PATH:
                self._send(200, oracle.health())
            else:
                self._send(404, {"error": f"unknown path {self.path}"})

        def do_POST(self):
            if self.path != wire.GRADIENT_PATH:
                self._send(404, {"error": f"unknown path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length).decode("utf-8"))
            except Exception as exc:
                self._send(400, {"error": f"body: invalid JSON ({exc})"})
                return
            try:
                req = wire.parse_request(body, max_size=max_size)
            except wire.WireError as exc:
                self._send(413 if getattr(exc, "oversize", False) else 400,
                           {"error": str(exc), "field": exc.field})
                return
            try:
                grad = oracle.gradient_for(
                    image=req["image"].astype(np.float64),
                    timestep=req["timestep"],
                    prompt=req["prompt"],
                    cfg_scale=req["cfg_scale"],
                    noise_seed=req["noise_seed"],
                    grid=req["grid"],
                )
            except Exception as exc:
                self._send(500, {"error": f"oracle failure: {exc}"})
                return
            self._send(200, wire.build_response(grad.astype(np.float32)))

    return Handler


class ToyOracleServer:
    """Threaded server wrapper; use as a context manager in tests."""

    def __init__(self, oracle: ToyGaussianOracle, host: str = "127.0.0.1", port: int = 0,
                 max_size: int = DEFAULT_MAX_SIZE):
        self.httpd = ThreadingHTTPServer((host, port), make_handler(oracle, max_size))
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)

    def serve_forever(self):
        try:
            self.httpd.serve_forever()
        finally:
            self.httpd.server_close()


def run(host: str, port: int, mean: float, cov_scale: float) -> None:
    oracle = ToyGaussianOracle(mean=mean, cov_scale=cov_scale)
    server = ToyOracleServer(oracle, host=host, port=port)
    print(f"toy guidance oracle listening on {server.url}")
    server.serve_forever()
