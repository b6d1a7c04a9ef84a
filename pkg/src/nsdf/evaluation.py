"""End-to-end geometric evaluation and the shaded render emission.

Pipeline: mark reference visibility from the scene's visible cameras,
normalize both meshes by the reference's minimal enclosing sphere, resample
both at the protocol spacing, then compute precision/recall/F-score plus the
visible-part recall.  Render emission additionally filters candidate
evaluation viewpoints by the visible-pixel fraction and writes diffuse
renders + a manifest; embedding similarity over the renders is a downstream
step outside this toolkit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cameras import Camera
from .geom import (
    MetricsReport,
    TriangleMesh,
    f_score,
    fibonacci_sphere_views,
    mark_visible,
    normalize_pair,
    precision_recall,
    recall_visible,
    render_eval_view,
    resample_surface,
    select_unobserved_eval_views,
)
from .images import write_png


def evaluate_geometry(recon: TriangleMesh, reference: TriangleMesh,
                      visible_views: list[Camera], threshold: float = 0.02,
                      spacing: float = 0.003, seed: int = 0) -> MetricsReport:
    mark_visible(reference, visible_views)
    ref_n, recon_n, _ = normalize_pair(reference, recon)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    recon_samples = resample_surface(recon_n, spacing, rng)
    ref_samples = resample_surface(ref_n, spacing, rng)
    p, r = precision_recall(recon_samples.points, ref_samples.points, recon_n, ref_n, threshold)
    vis_recall = recall_visible(ref_samples.points, ref_samples.source_triangle,
                                ref_n, recon_n, threshold)
    n_vis = int(ref_n.visible[ref_samples.source_triangle].sum())
    return MetricsReport(precision=p, recall=r, f_score=f_score(p, r),
                         visible_recall=vis_recall, threshold=threshold, spacing=spacing,
                         n_recon_samples=len(recon_samples), n_ref_samples=len(ref_samples),
                         n_ref_visible_samples=n_vis)


def emit_eval_renders(out_dir: Path, recon: TriangleMesh, reference: TriangleMesh,
                      visible_views: list[Camera], n_views: int = 100,
                      resolution: int = 256) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mark_visible(reference, visible_views)
    ref_n, recon_n, transform = normalize_pair(reference, recon)
    views = fibonacci_sphere_views(n_views, resolution=resolution)
    kept, records = select_unobserved_eval_views(views, ref_n)
    manifest = {"transform": transform, "n_views": n_views, "resolution": resolution,
                "views": []}
    for i, cam in enumerate(views):
        ref_img = render_eval_view(ref_n, cam)
        recon_img = render_eval_view(recon_n, cam)
        write_png(out_dir / f"ref_{i:03d}.png", ref_img)
        write_png(out_dir / f"recon_{i:03d}.png", recon_img)
        manifest["views"].append({
            "id": i,
            "pose": cam.pose.tolist(),
            "extent": cam.extent.tolist(),
            "kept": bool(i in kept),
            "visible_fraction": records[i]["visible_fraction"],
            "reference_render": f"ref_{i:03d}.png",
            "reconstruction_render": f"recon_{i:03d}.png",
        })
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return manifest
