"""Scene description: manifest + camera text files + images/masks on disk.

A scene directory holds manifest.json, per-view camera files (plain text,
row-major 4x4 world-from-camera pose plus 3x3 intrinsics or an orthographic
extent), images as PNG (8- or 16-bit), masks as 8-bit PNG (>= 128 means
foreground), and optionally a reference mesh.  The synthesizer builds such
directories from analytic SDFs so tests always have exact references.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
import torch

from .cameras import ORTHOGRAPHIC, PINHOLE, Camera, look_at, pinhole_intrinsics
from .fields import AnalyticSdf
from .geom.extract import extract_mesh
from .geom.mesh import TriangleMesh, save_mesh
from .images import read_png, write_png
from .render import SamplingSpec, render_image


class SceneError(ValueError):
    """Scene failed to load or validate; message names the offending view."""


# ---------------------------------------------------------------------------
# camera text files


def write_camera(path, cam: Camera) -> None:
    lines = [f"model {cam.model}", f"width {cam.width}", f"height {cam.height}", "pose"]
    for row in cam.pose:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    if cam.model == PINHOLE:
        lines.append("intrinsics")
        for row in cam.intrinsics:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    else:
        lines.append("extent")
        lines.append(" ".join(f"{v:.17g}" for v in cam.extent))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_camera(path) -> Camera:
    tokens = Path(path).read_text(encoding="ascii").split()
    it = iter(tokens)
    fields: dict = {}
    try:
        while True:
            tok = next(it)
            if tok == "model":
                fields["model"] = next(it)
            elif tok in ("width", "height"):
                fields[tok] = int(next(it))
            elif tok == "pose":
                fields["pose"] = np.array([float(next(it)) for _ in range(16)]).reshape(4, 4)
            elif tok == "intrinsics":
                fields["intrinsics"] = np.array([float(next(it)) for _ in range(9)]).reshape(3, 3)
            elif tok == "extent":
                fields["extent"] = np.array([float(next(it)) for _ in range(2)])
            else:
                raise SceneError(f"{path}: unexpected token {tok!r}")
    except StopIteration:
        pass
    for req in ("model", "width", "height", "pose"):
        if req not in fields:
            raise SceneError(f"{path}: missing camera field {req!r}")
    try:
        return Camera(fields["model"], fields["pose"], fields["width"], fields["height"],
                      intrinsics=fields.get("intrinsics"), extent=fields.get("extent"))
    except ValueError as exc:
        raise SceneError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# manifest + loaded scene


@dataclass
class ViewRecord:
    camera: Camera
    image: np.ndarray | None = None   # (H, W, 3) float in [0, 1]
    mask: np.ndarray | None = None    # (H, W) float in [0, 1]


@dataclass
class Scene:
    name: str
    prompt_base: str
    visible: list[ViewRecord]
    unobserved: list[ViewRecord]
    reference_mesh_path: Path | None = None
    root: Path | None = None
    manifest: dict = dataclass_field(default_factory=dict)


def load_scene(path) -> Scene:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise SceneError(f"{root}: manifest.json not found")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    for key in ("name", "prompt_base", "visible", "unobserved"):
        if key not in manifest:
            raise SceneError(f"{manifest_path}: missing key {key!r}")
    if not manifest["visible"]:
        raise SceneError(f"{manifest_path}: scene needs at least one visible view")

    def resolve(rel, view, kind):
        p = root / rel
        if not p.exists():
            raise SceneError(f"{kind} view {view}: file not found: {p}")
        return p

    visible = []
    for i, rec in enumerate(manifest["visible"]):
        for key in ("camera", "image", "mask"):
            if key not in rec:
                raise SceneError(f"visible view {i}: manifest record missing {key!r}")
        cam = read_camera(resolve(rec["camera"], i, "visible"))
        if cam.model == PINHOLE and abs(np.linalg.det(cam.intrinsics)) < 1e-12:
            raise SceneError(f"visible view {i}: intrinsics are not invertible")
        image = read_png(resolve(rec["image"], i, "visible"))
        if image.ndim == 2:
            image = np.repeat(image[:, :, None], 3, axis=2)
        mask = read_png(resolve(rec["mask"], i, "visible"))
        if mask.ndim == 3:
            mask = mask[:, :, 0]
        if image.shape[:2] != (cam.height, cam.width):
            raise SceneError(f"visible view {i}: image is {image.shape[:2]}, camera expects "
                             f"{(cam.height, cam.width)}")
        if mask.shape != image.shape[:2]:
            raise SceneError(f"visible view {i}: mask {mask.shape} does not match image "
                             f"{image.shape[:2]}")
        visible.append(ViewRecord(cam, image, mask))
    unobserved = []
    for i, rec in enumerate(manifest["unobserved"]):
        if "camera" not in rec:
            raise SceneError(f"unobserved view {i}: manifest record missing 'camera'")
        unobserved.append(ViewRecord(read_camera(resolve(rec["camera"], i, "unobserved"))))

    ref = None
    if manifest.get("reference_mesh"):
        ref = resolve(manifest["reference_mesh"], "-", "reference")
    return Scene(name=manifest["name"], prompt_base=manifest["prompt_base"],
                 visible=visible, unobserved=unobserved, reference_mesh_path=ref,
                 root=root, manifest=manifest)


# ---------------------------------------------------------------------------
# synthetic scenes from analytic SDFs


def shape_from_spec(spec: dict) -> AnalyticSdf:
    kind = spec.get("kind", "sphere")
    if kind == "sphere":
        return AnalyticSdf.sphere(spec.get("radius", 0.6), spec.get("center", (0.0, 0.0, 0.0)))
    if kind == "box":
        return AnalyticSdf.box(spec.get("half_extents", (0.4, 0.3, 0.5)))
    if kind == "torus":
        return AnalyticSdf.torus(spec.get("major", 0.5), spec.get("minor", 0.2))
    if kind == "union":
        parts = [shape_from_spec(s) for s in spec["parts"]]
        out = parts[0]
        for p in parts[1:]:
            out = AnalyticSdf.union(out, p)
        return out
    raise SceneError(f"unknown shape kind {kind!r}")


class LambertRadiance:
    """Analytic appearance for synthetic scenes: position-modulated albedo
    with diffuse shading from the SDF normal."""

    def __init__(self, light_dir=(0.4, 0.5, 0.75), ambient: float = 0.35):
        light = np.asarray(light_dir, dtype=np.float64)
        self.light = torch.from_numpy(light / np.linalg.norm(light))
        self.ambient = ambient

    def __call__(self, p: torch.Tensor, v: torch.Tensor, n: torch.Tensor,
                 feat: torch.Tensor) -> torch.Tensor:
        albedo = 0.5 + 0.35 * torch.sin(4.0 * p + torch.tensor([0.0, 2.1, 4.2], dtype=p.dtype))
        nrm = n / torch.linalg.norm(n, dim=-1, keepdim=True).clamp_min(1e-9)
        diffuse = self.ambient + (1 - self.ambient) * (nrm @ self.light.to(p.dtype)).clamp_min(0.0)
        return (albedo * diffuse.unsqueeze(-1)).clamp(0.0, 1.0)


def hemisphere_cameras(n: int, top: bool, width: int, height: int, distance: float = 2.2,
                       fov_deg: float = 40.0, elev_range=(32.0, 62.0)) -> list[Camera]:
    cams = []
    sign = 1.0 if top else -1.0
    for i in range(n):
        elev = np.deg2rad(elev_range[0] + (elev_range[1] - elev_range[0]) *
                          ((i % 3) / max(1, 2)))
        azim = 2.0 * np.pi * i / n
        eye = distance * np.array([np.cos(elev) * np.cos(azim),
                                   np.cos(elev) * np.sin(azim),
                                   sign * np.sin(elev)])
        cams.append(Camera(PINHOLE, look_at(eye), width, height,
                           intrinsics=pinhole_intrinsics(fov_deg, width, height)))
    return cams


def synth_scene(out_dir, shape_spec: dict, n_visible: int = 8, n_unobserved: int = 4,
                resolution: int = 64, name: str = "toy", prompt_base: str = "a simple object",
                ref_resolution: int = 192, render_samples: int = 160,
                render_s: float = 2048.0) -> Scene:
    """Generate a scene directory with exact analytic references.

    Visible cameras sit on the +z hemisphere, unobserved (guidance) cameras on
    the opposite one; images come from a dense-sample render of the analytic
    SDF, the reference mesh from high-resolution extraction.
    """
    out = Path(out_dir)
    for sub in ("cams", "images", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    sdf = shape_from_spec(shape_spec)
    radiance = LambertRadiance()
    sampling = SamplingSpec(n_coarse=render_samples, n_importance=render_samples,
                            perturb=False, bg_color=(1.0, 1.0, 1.0))

    vis_cams = hemisphere_cameras(n_visible, True, resolution, resolution)
    unobs_cams = hemisphere_cameras(n_unobserved, False, resolution, resolution)
    manifest = {"name": name, "prompt_base": prompt_base, "shape": shape_spec,
                "visible": [], "unobserved": [], "reference_mesh": "reference.ply"}
    with torch.no_grad():
        for i, cam in enumerate(vis_cams):
            out_img = render_image(sdf, radiance, torch.tensor(render_s), cam, sampling,
                                   need_normal=False)
            img = out_img["color"].numpy()
            mask = (out_img["opacity"].numpy() > 0.5).astype(np.float64)
            write_camera(out / "cams" / f"v{i:02d}.txt", cam)
            write_png(out / "images" / f"v{i:02d}.png", img, bitdepth=16)
            write_png(out / "masks" / f"v{i:02d}.png", mask, bitdepth=8)
            manifest["visible"].append({"camera": f"cams/v{i:02d}.txt",
                                        "image": f"images/v{i:02d}.png",
                                        "mask": f"masks/v{i:02d}.png"})
        for i, cam in enumerate(unobs_cams):
            write_camera(out / "cams" / f"u{i:02d}.txt", cam)
            manifest["unobserved"].append({"camera": f"cams/u{i:02d}.txt"})

    ref = extract_mesh(sdf, ref_resolution)
    save_mesh(out / "reference.ply", ref)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return load_scene(out)
