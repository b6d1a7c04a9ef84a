"""Cameras and ray generation.

Camera frame convention: x right, y up, forward along -z (an identity pose
looks down the world -z axis).  Image v grows downward, so pixel (u, v) back-
projects to ((u+0.5-cx)/fx, -(v+0.5-cy)/fy, -1) in camera coordinates before
rotation into the world.  Orthographic cameras carry a world-space extent
instead of intrinsics; all their rays share the forward direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PINHOLE = "pinhole"
ORTHOGRAPHIC = "orthographic"


@dataclass
class Camera:
    model: str                      # "pinhole" | "orthographic"
    pose: np.ndarray                # (4, 4) world-from-camera
    width: int
    height: int
    intrinsics: np.ndarray | None = None   # (3, 3), pinhole only
    extent: np.ndarray | None = None       # (2,) world units, orthographic only

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape != (4, 4):
            raise ValueError(f"pose must be 4x4, got {self.pose.shape}")
        R = self.pose[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValueError("pose rotation is not orthonormal (tol 1e-6)")
        if self.model == PINHOLE:
            if self.intrinsics is None:
                raise ValueError("pinhole camera requires intrinsics")
            self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
            if self.intrinsics.shape != (3, 3):
                raise ValueError(f"intrinsics must be 3x3, got {self.intrinsics.shape}")
            if self.intrinsics[0, 0] <= 0 or self.intrinsics[1, 1] <= 0:
                raise ValueError("intrinsics must have positive focal entries")
        elif self.model == ORTHOGRAPHIC:
            if self.extent is None:
                raise ValueError("orthographic camera requires extent")
            self.extent = np.asarray(self.extent, dtype=np.float64)
            if self.extent.shape != (2,) or np.any(self.extent <= 0):
                raise ValueError("extent must be two positive numbers")
        else:
            raise ValueError(f"unknown camera model {self.model!r}")

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def right(self) -> np.ndarray:
        return self.pose[:3, 0]

    @property
    def up(self) -> np.ndarray:
        return self.pose[:3, 1]

    @property
    def forward(self) -> np.ndarray:
        return -self.pose[:3, 2]

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points (N, 3) -> pixel coordinates (N, 2) and in-front flags."""
        points = np.atleast_2d(points)
        rel = (points - self.center) @ self.pose[:3, :3]  # camera coords
        if self.model == PINHOLE:
            z = -rel[:, 2]
            in_front = z > 1e-12
            zs = np.where(in_front, z, 1.0)
            u = self.intrinsics[0, 0] * (rel[:, 0] / zs) + self.intrinsics[0, 2]
            v = self.intrinsics[1, 1] * (-rel[:, 1] / zs) + self.intrinsics[1, 2]
        else:
            in_front = np.ones(rel.shape[0], dtype=bool)
            u = (rel[:, 0] / self.extent[0] + 0.5) * self.width
            v = (0.5 - rel[:, 1] / self.extent[1]) * self.height
        return np.stack([u, v], axis=1), in_front

    def contains_pixel(self, uv: np.ndarray) -> np.ndarray:
        return (uv[:, 0] >= 0) & (uv[:, 0] < self.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.height)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-from-camera pose with -z pointing from eye toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    if abs(np.dot(upv / np.linalg.norm(upv), fwd)) > 0.999:
        upv = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, upv)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = true_up
    pose[:3, 2] = -fwd
    pose[:3, 3] = eye
    return pose


def pinhole_intrinsics(fov_deg: float, width: int, height: int) -> np.ndarray:
    f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2)
    return np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])


@dataclass
class RayBundle:
    origins: np.ndarray     # (N, 3)
    dirs: np.ndarray        # (N, 3) unit
    pixels: np.ndarray      # (N, 2) integer (u, v)
    near: np.ndarray        # (N,)
    far: np.ndarray         # (N,)

    def __post_init__(self):
        norms = np.linalg.norm(self.dirs, axis=-1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("ray directions must be unit length (tol 1e-6)")
        if np.any(self.near > self.far):
            raise ValueError("ray near must not exceed far")

    def __len__(self) -> int:
        return self.origins.shape[0]

    @property
    def hits_bound(self) -> np.ndarray:
        # rays that miss the scene bound carry an empty [0, 0] interval
        return self.far - self.near > 1e-9


def sphere_interval(origins: np.ndarray, dirs: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Entry/exit distances of rays against the bounding sphere; [0, 0] on miss."""
    b = np.einsum("ij,ij->i", origins, dirs)
    c = np.einsum("ij,ij->i", origins, origins) - radius**2
    disc = b * b - c
    hit = disc > 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    near = np.where(hit, np.maximum(-b - sq, 0.0), 0.0)
    far = np.where(hit, np.maximum(-b + sq, 0.0), 0.0)
    # rays whose exit is behind the origin never touch the sphere
    miss = far <= near
    return np.where(miss, 0.0, near), np.where(miss, 0.0, far)


def all_pixels(camera: Camera) -> np.ndarray:
    u, v = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    return np.stack([u.ravel(), v.ravel()], axis=1)


def generate_rays(camera: Camera, pixels: np.ndarray, bound_radius: float = 1.0) -> RayBundle:
    """Rays through pixel centers, with near/far clipped to the bound sphere."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError(f"pixels must be (N, 2), got {pixels.shape}")
    if np.any(pixels[:, 0] < 0) or np.any(pixels[:, 0] >= camera.width) or \
       np.any(pixels[:, 1] < 0) or np.any(pixels[:, 1] >= camera.height):
        raise ValueError("pixel coordinates outside camera resolution")
    uv = pixels.astype(np.float64) + 0.5
    R = camera.pose[:3, :3]
    if camera.model == PINHOLE:
        K = camera.intrinsics
        d_cam = np.stack([
            (uv[:, 0] - K[0, 2]) / K[0, 0],
            -(uv[:, 1] - K[1, 2]) / K[1, 1],
            -np.ones(len(uv)),
        ], axis=1)
        dirs = d_cam @ R.T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(camera.center, dirs.shape).copy()
    else:
        sx = (uv[:, 0] / camera.width - 0.5) * camera.extent[0]
        sy = (0.5 - uv[:, 1] / camera.height) * camera.extent[1]
        origins = camera.center + sx[:, None] * camera.right + sy[:, None] * camera.up
        dirs = np.broadcast_to(camera.forward, origins.shape).copy()
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    near, far = sphere_interval(origins, dirs, bound_radius)
    return RayBundle(origins=origins, dirs=dirs, pixels=pixels.astype(np.int64), near=near, far=far)
