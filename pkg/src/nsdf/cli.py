"""Command line interface.

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import torch

log = logging.getLogger("nsdf")

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Global RNG seed.")
@click.option("--threads", type=int, default=0, show_default=True,
              help="Torch thread count (0 keeps the default).")
@click.option("--log-level", default="info", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]))
@click.pass_context
def main(ctx, seed, threads, log_level):
    """Neural SDF reconstruction with diffusion-guided shape completion."""
    logging.basicConfig(level=getattr(logging, log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    if threads > 0:
        torch.set_num_threads(threads)
    ctx.obj = {"seed": seed, "threads": threads}


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    from .configfile import ConfigError
    from .scene import SceneError

    try:
        fn()
    except (SceneError, ConfigError, click.ClickException, ValueError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--shape", default="sphere", show_default=True,
              type=click.Choice(["sphere", "box", "torus", "union"]))
@click.option("--radius", type=float, default=0.6, show_default=True)
@click.option("--center", default="0,0,0", show_default=True, help="Sphere center x,y,z.")
@click.option("--n-visible", type=int, default=8, show_default=True)
@click.option("--n-unobserved", type=int, default=4, show_default=True)
@click.option("--resolution", type=int, default=64, show_default=True)
@click.option("--prompt", default="a simple object", show_default=True)
@click.pass_context
def synth(ctx, out, shape, radius, center, n_visible, n_unobserved, resolution, prompt):
    """Generate a synthetic scene with exact analytic references."""

    def run():
        from .scene import synth_scene

        spec = {"kind": shape}
        if shape == "sphere":
            spec["radius"] = radius
            spec["center"] = tuple(float(x) for x in center.split(","))
        elif shape == "torus":
            spec["major"] = radius
            spec["minor"] = radius / 3.0
        elif shape == "union":
            spec["parts"] = [{"kind": "sphere", "radius": radius,
                              "center": (-radius / 2, 0.0, 0.0)},
                             {"kind": "sphere", "radius": radius,
                              "center": (radius / 2, 0.0, 0.0)}]
        scene = synth_scene(out, spec, n_visible=n_visible, n_unobserved=n_unobserved,
                            resolution=resolution, prompt_base=prompt)
        click.echo(f"wrote scene {scene.name!r} with {len(scene.visible)} visible + "
                   f"{len(scene.unobserved)} unobserved views to {out}")

    _guarded(run)


@main.command()
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="Flat key=value config file (defaults to the toy preset).")
@click.option("--out", required=True, type=click.Path())
@click.option("--ablation", type=click.Choice(["neus", "neus-sds", "+normals", "+frozen",
                                               "+multiview"]), default=None,
              help="Override the guidance flags with an ablation rung.")
@click.option("--resume", type=click.Path(exists=True), help="Checkpoint to resume from.")
@click.pass_context
def fit(ctx, scene_dir, config_path, out, ablation, resume):
    """Fit the fields to a scene (NSDF_GUIDANCE_URL selects a remote oracle)."""

    def run():
        from .configfile import load_config
        from .scene import load_scene
        from .trainer import TrainConfig, Trainer

        cfg = TrainConfig.toy(seed=ctx.obj["seed"], threads=ctx.obj["threads"])
        if config_path:
            cfg = load_config(config_path, base=cfg)
        if ablation:
            cfg = cfg.with_ablation(ablation)
        scene = load_scene(scene_dir)
        trainer = Trainer(scene, cfg, out_dir=out)
        if resume:
            trainer.load_state(resume)
        result = trainer.fit()
        click.echo(f"finished {cfg.iterations} iterations; final checkpoint "
                   f"{result['final_checkpoint']}")

    _guarded(run)


@main.command("extract-mesh")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--resolution", type=int, default=128, show_default=True)
@click.option("--keep-largest/--no-keep-largest", default=True, show_default=True)
@click.option("--bound", type=float, default=1.0, show_default=True)
def extract_mesh_cmd(checkpoint, out, resolution, keep_largest, bound):
    """Extract the zero level set of a checkpointed field as a mesh."""

    def run():
        from .checkpoint import load_fields
        from .geom import extract_mesh, save_mesh

        sdf, _, _, _ = load_fields(checkpoint)
        mesh = extract_mesh(sdf, resolution, bounds=((-bound,) * 3, (bound,) * 3),
                            keep_largest=keep_largest)
        save_mesh(out, mesh)
        click.echo(f"wrote {mesh.n_triangles} triangles to {out}")

    _guarded(run)


@main.command("eval-geom")
@click.option("--recon", required=True, type=click.Path(exists=True), help="Reconstructed mesh.")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True),
              help="Scene with reference mesh + visible cameras.")
@click.option("--out", required=True, type=click.Path(), help="Metrics JSON path.")
@click.option("--threshold", type=float, default=0.02, show_default=True)
@click.option("--spacing", type=float, default=0.003, show_default=True)
@click.pass_context
def eval_geom(ctx, recon, scene_dir, out, threshold, spacing):
    """Full geometric evaluation protocol against the scene reference mesh."""

    def run():
        from .evaluation import evaluate_geometry
        from .geom import load_mesh
        from .scene import load_scene

        scene = load_scene(scene_dir)
        if scene.reference_mesh_path is None:
            raise ValueError(f"scene {scene_dir} has no reference mesh")
        report = evaluate_geometry(load_mesh(recon), load_mesh(scene.reference_mesh_path),
                                   [v.camera for v in scene.visible],
                                   threshold=threshold, spacing=spacing,
                                   seed=ctx.obj["seed"])
        Path(out).write_text(report.to_json() + "\n", encoding="utf-8")
        click.echo(report.to_json())

    _guarded(run)


@main.command("eval-renders")
@click.option("--recon", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--n-views", type=int, default=100, show_default=True)
@click.option("--resolution", type=int, default=256, show_default=True)
def eval_renders(recon, scene_dir, out, n_views, resolution):
    """Emit the shaded evaluation renders plus a manifest with view status."""

    def run():
        from .evaluation import emit_eval_renders
        from .geom import load_mesh
        from .scene import load_scene

        scene = load_scene(scene_dir)
        if scene.reference_mesh_path is None:
            raise ValueError(f"scene {scene_dir} has no reference mesh")
        manifest = emit_eval_renders(Path(out), load_mesh(recon),
                                     load_mesh(scene.reference_mesh_path),
                                     [v.camera for v in scene.visible],
                                     n_views=n_views, resolution=resolution)
        click.echo(f"wrote {len(manifest['views'])} views to {out} "
                   f"({sum(v['kept'] for v in manifest['views'])} kept)")

    _guarded(run)


@main.command("serve-toy-oracle")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8199, show_default=True)
@click.option("--mean", type=float, default=0.5, show_default=True)
@click.option("--cov-scale", type=float, default=0.25, show_default=True)
def serve_toy_oracle(host, port, mean, cov_scale):
    """Serve the analytic toy oracle over the guidance wire protocol."""

    def run():
        from .sds.toy_server import run as serve

        serve(host, port, mean, cov_scale)

    _guarded(run)


if __name__ == "__main__":
    main()
