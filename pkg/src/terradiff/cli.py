"""Command-line entry point: build-dataset / train / generate / evaluate / serve."""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .errors import (
    CheckpointError,
    DataValidationError,
    TerrainError,
    UnsupportedFormatError,
)
from .levels import LEVELS

logger = logging.getLogger("terradiff")

TDN_HOME_ENV = "TDN_HOME"


def default_artifact_dir() -> Path:
    import os

    return Path(os.environ.get(TDN_HOME_ENV, "~/.terradiff")).expanduser() / "artifacts"


def _resolve_checkpoints(value: str | None) -> Path:
    path = Path(value) if value else default_artifact_dir()
    if not path.is_dir():
        raise CheckpointError(f"artifact directory {path} not found")
    return path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4
EXIT_INTERNAL = 5


def _echo_effective_config(command: str, out_dir: Path | None, params: dict) -> None:
    effective = {"command": command, **{k: str(v) if isinstance(v, Path) else v for k, v in params.items()}}
    logger.info("effective config: %s", json.dumps(effective, sort_keys=True))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"effective_config_{command}.json").write_text(
            json.dumps(effective, indent=2, sort_keys=True)
        )


@click.group(context_settings={"show_default": True})
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file with per-command default flags.")
@click.option("--log-level", default="INFO", help="Logging level.")
@click.option("--seed", default=0, type=int, help="Root seed; all stages derive substreams from it.")
@click.option("--device", default="cpu", help="Compute device selector.")
@click.pass_context
def cli(ctx, config, log_level, seed, device):
    """Sketch-guided terrain generation toolkit."""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    if device != "cpu":
        raise click.UsageError(f"unsupported device {device!r}; this build is CPU-only")
    if config:
        ctx.default_map = json.loads(Path(config).read_text())
    ctx.obj = {"seed": seed, "device": device}


@cli.command("build-dataset")
@click.option("--synthetic", type=int, default=None, help="Number of synthetic tiles to build.")
@click.option("--raster", "rasters", type=click.Path(exists=True, dir_okay=False), multiple=True,
              help="Raster DEM(s) to tile (16-bit PNG; TIFF behind --allow-tiff).")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output dataset directory.")
@click.option("--seed", default=None, type=int, help="Dataset seed (defaults to the root seed).")
@click.option("--tile-size", default=144, type=int, help="Tile edge length in cells.")
@click.option("--stride", default=None, type=int, help="Tiling stride (defaults to tile size).")
@click.option("--test-fraction", default=0.2, type=float, help="Fraction of tiles tagged test.")
@click.option("--roughness", default=0.65, type=float, help="Fractal roughness for synthetic DEMs.")
@click.option("--relief", default=1000.0, type=float, help="Synthetic corner relief in meters.")
@click.option("--river-quantile", default=0.95, type=float, help="Accumulation quantile for rivers/ridges.")
@click.option("--peak-window", default=9, type=int, help="Window size for peak/basin detection.")
@click.option("--prominence-frac", default=0.02, type=float, help="Prominence floor as a fraction of relief.")
@click.option("--infill-nodata", is_flag=True, help="Nearest-neighbor infill for nodata cells.")
@click.option("--allow-tiff", is_flag=True, help="Enable the feature-flagged TIFF reader.")
@click.pass_context
def cmd_build_dataset(ctx, synthetic, rasters, out, seed, tile_size, stride, test_fraction,
                      roughness, relief, river_quantile, peak_window, prominence_frac,
                      infill_nodata, allow_tiff):
    """Build paired heightmap/sketch tiles and the train/test manifest."""
    from .pipeline import build_dataset_from_rasters, build_synthetic_dataset
    from .sketches import SketchConfig

    if (synthetic is None) == (not rasters):
        raise click.UsageError("pass exactly one of --synthetic or --raster")
    seed = ctx.obj["seed"] if seed is None else seed
    out_dir = Path(out)
    sketch_cfg = SketchConfig(
        river_quantile=river_quantile,
        ridge_quantile=river_quantile,
        peak_window=peak_window,
        basin_window=peak_window,
        prominence_frac=prominence_frac,
    )
    _echo_effective_config("build-dataset", out_dir, {
        "synthetic": synthetic, "rasters": list(rasters), "seed": seed, "tile_size": tile_size,
        "stride": stride, "test_fraction": test_fraction, "roughness": roughness, "relief": relief,
        "river_quantile": river_quantile, "peak_window": peak_window,
        "prominence_frac": prominence_frac,
    })
    if synthetic is not None:
        manifest = build_synthetic_dataset(
            out_dir, synthetic, seed, tile_size=tile_size, test_fraction=test_fraction,
            roughness=roughness, relief=relief, sketch_cfg=sketch_cfg,
        )
    else:
        manifest = build_dataset_from_rasters(
            [Path(r) for r in rasters], out_dir, seed, tile_size=tile_size, stride=stride,
            test_fraction=test_fraction, sketch_cfg=sketch_cfg,
            infill_nodata=infill_nodata, allow_tiff=allow_tiff,
        )
    click.echo(str(manifest))


STAGES = ("features", "ae", "guidance", "stack", "single", "no_sketch_ae", "cross_attention", "all")


def _train_config(ctx, seed, lr, batch_size, max_steps, checkpoint_interval, grad_clip):
    from .training import TrainConfig

    return TrainConfig(
        learning_rate=lr,
        batch_size=batch_size,
        max_steps=max_steps,
        seed=ctx.obj["seed"] if seed is None else seed,
        checkpoint_interval=checkpoint_interval,
        grad_clip=grad_clip,
    )


@cli.command("train")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Dataset manifest JSON.")
@click.option("--out", default=None, type=click.Path(file_okay=False),
              help="Artifact directory [default: $TDN_HOME/artifacts].")
@click.option("--stage", type=click.Choice(STAGES), default="all", help="Which stage(s) to train.")
@click.option("--seed", default=None, type=int, help="Training seed (defaults to the root seed).")
@click.option("--lr", default=1.0e-05, type=float, help="Learning rate.")
@click.option("--batch-size", default=6, type=int, help="Batch size.")
@click.option("--max-steps", default=1000, type=int, help="Optimizer steps per stage.")
@click.option("--checkpoint-interval", default=100, type=int, help="Steps between run-record samples.")
@click.option("--grad-clip", default=1.0, type=float, help="Gradient-norm clip (0 disables).")
@click.option("--feature-width", default=16, type=int, help="Feature-extractor base width.")
@click.option("--ae-width", default=16, type=int, help="Autoencoder base width.")
@click.option("--guidance-width", default=8, type=int, help="Per-sketch encoder width.")
@click.option("--embed-dim", default=32, type=int, help="Guidance transformer embedding dim.")
@click.option("--denoiser-width", default=32, type=int, help="Denoiser base width.")
@click.option("--timesteps", default=1000, type=int, help="Diffusion training steps T.")
@click.option("--budgets", default="16,10,10", help="Sampling budgets structural,intermediate,fine.")
@click.pass_context
def cmd_train(ctx, data, out, stage, seed, lr, batch_size, max_steps, checkpoint_interval,
              grad_clip, feature_width, ae_width, guidance_width, embed_dim, denoiser_width,
              timesteps, budgets):
    """Train model stages into an artifact directory."""
    from .assets import ABLATIONS_DIR
    from .checkpoint import load_checkpoint
    from .dem import DatasetManifest
    from .diffusion import make_cosine_schedule
    from .models.autoencoder import AEConfig
    from .models.denoiser import DenoiserConfig
    from .models.features import FeatureConfig
    from .models.guidance import GuidanceConfig
    from .training import (
        train_autoencoder,
        train_feature_extractor,
        train_level,
        train_sketch_encoder,
        train_stack,
        load_training_data,
        prepare_latent_dataset,
    )

    manifest = DatasetManifest.load(data)
    out_dir = Path(out) if out else default_artifact_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _train_config(ctx, seed, lr, batch_size, max_steps, checkpoint_interval, grad_clip)
    sched = make_cosine_schedule(timesteps)
    budget_values = [int(b) for b in budgets.split(",")]
    if len(budget_values) != 3 or any(b < 1 for b in budget_values):
        raise click.UsageError(f"--budgets needs three positive integers, got {budgets!r}")
    budget_map = dict(zip(LEVELS, budget_values))
    _echo_effective_config("train", out_dir, {
        "data": data, "stage": stage, "config": cfg.__dict__, "feature_width": feature_width,
        "ae_width": ae_width, "guidance_width": guidance_width, "embed_dim": embed_dim,
        "denoiser_width": denoiser_width, "timesteps": timesteps, "budgets": budget_map,
    })

    def need(path: Path, hint: str):
        if not path.exists():
            raise CheckpointError(f"missing {path}; run train --stage {hint} first")
        return load_checkpoint(path)

    stages = [stage] if stage != "all" else ["features", "ae", "guidance", "stack"]
    for st in stages:
        logger.info("training stage %s", st)
        if st == "features":
            train_feature_extractor(manifest, cfg, out_dir, FeatureConfig(width=feature_width))
        elif st == "ae":
            phi = need(out_dir / "features.tdnc", "features")
            train_autoencoder(manifest, cfg, phi, out_dir, AEConfig(base_width=ae_width))
        elif st == "guidance":
            train_sketch_encoder(
                manifest, cfg, out_dir,
                GuidanceConfig(encoder_width=guidance_width, embed_dim=embed_dim),
            )
        elif st == "stack":
            ae = need(out_dir / "autoencoder.tdnc", "ae")
            guidance_encoder = need(out_dir / "guidance.tdnc", "guidance")
            level_cfgs = {
                lv: DenoiserConfig(level=lv, base_width=denoiser_width,
                                   prev_conditioning=lv != "structural")
                for lv in LEVELS
            }
            train_stack(manifest, sched, cfg, ae, guidance_encoder, out_dir,
                        level_cfgs=level_cfgs, budgets=budget_map)
        elif st == "single":
            ae = need(out_dir / "autoencoder.tdnc", "ae")
            guidance_encoder = need(out_dir / "guidance.tdnc", "guidance")
            dataset = prepare_latent_dataset(load_training_data(manifest), ae, guidance_encoder)
            train_level(
                "fine", dataset, sched, cfg, out_dir / ABLATIONS_DIR / "single_level",
                denoiser_cfg=DenoiserConfig(level="fine", base_width=denoiser_width),
            )
        elif st == "no_sketch_ae":
            ae = need(out_dir / "autoencoder.tdnc", "ae")
            mode_dir = out_dir / ABLATIONS_DIR / "no_sketch_ae"
            shared, _ = train_sketch_encoder(
                manifest, cfg, mode_dir,
                GuidanceConfig(embed_dim=embed_dim, share_terrain_encoder=True),
                terrain_ae=ae,
            )
            level_cfgs = {
                lv: DenoiserConfig(level=lv, base_width=denoiser_width,
                                   prev_conditioning=lv != "structural")
                for lv in LEVELS
            }
            train_stack(manifest, sched, cfg, ae, shared, mode_dir,
                        level_cfgs=level_cfgs, budgets=budget_map)
        elif st == "cross_attention":
            ae = need(out_dir / "autoencoder.tdnc", "ae")
            guidance_encoder = need(out_dir / "guidance.tdnc", "guidance")
            level_cfgs = {
                lv: DenoiserConfig(level=lv, base_width=denoiser_width,
                                   guidance_mode="cross_attention",
                                   prev_conditioning=lv != "structural")
                for lv in LEVELS
            }
            train_stack(manifest, sched, cfg, ae, guidance_encoder,
                        out_dir / ABLATIONS_DIR / "cross_attention",
                        level_cfgs=level_cfgs, budgets=budget_map)
    click.echo(str(out_dir))


@cli.command("generate")
@click.option("--rivers", type=click.Path(exists=True, dir_okay=False), default=None, help="Rivers mask PNG.")
@click.option("--ridges", type=click.Path(exists=True, dir_okay=False), default=None, help="Ridges mask PNG.")
@click.option("--basins", type=click.Path(exists=True, dir_okay=False), default=None, help="Basins mask PNG.")
@click.option("--peaks", type=click.Path(exists=True, dir_okay=False), default=None, help="Peaks mask PNG.")
@click.option("--allow-missing", is_flag=True, help="Treat missing masks as all zeros.")
@click.option("--checkpoints", default=None, type=click.Path(file_okay=False),
              help="Artifact directory with autoencoder/guidance/stack checkpoints "
                   "[default: $TDN_HOME/artifacts].")
@click.option("--out", required=True, type=click.Path(), help="Output prefix for the artifact trio.")
@click.option("--seed", default=None, type=int, help="Generation seed (defaults to the root seed).")
@click.option("--steps", default=None, type=int, help="Override the total sampling step budget.")
@click.option("--relief", default=1000.0, type=float, help="Meters mapped onto the PNG16 range.")
@click.option("--azimuth", default=315.0, type=float, help="Hillshade light azimuth in degrees.")
@click.option("--altitude", default=45.0, type=float, help="Hillshade light altitude in degrees.")
@click.pass_context
def cmd_generate(ctx, rivers, ridges, basins, peaks, allow_missing, checkpoints, out, seed,
                 steps, relief, azimuth, altitude):
    """Generate a heightmap from four sketch mask PNGs."""
    from .assets import GeneratorBundle
    from .evaluation import hillshade
    from .heightmap import HeightMap, NormMeta
    from .imaging import write_heightmap_outputs
    from .levels import TILE_SIZE
    from .sketches import SKETCH_CHANNELS, load_mask_png

    seed = ctx.obj["seed"] if seed is None else seed
    mask_paths = {"rivers": rivers, "ridges": ridges, "basins": basins, "peaks": peaks}
    missing = [name for name, p in mask_paths.items() if p is None]
    if missing and not allow_missing:
        raise click.UsageError(
            f"missing masks {missing}; pass all four or opt in with --allow-missing"
        )
    masks = np.stack([
        load_mask_png(mask_paths[name], expected_size=TILE_SIZE)
        if mask_paths[name] else np.zeros((TILE_SIZE, TILE_SIZE), dtype=np.uint8)
        for name in SKETCH_CHANNELS
    ])

    checkpoints = _resolve_checkpoints(checkpoints)
    bundle = GeneratorBundle.load(checkpoints)
    budgets = None
    if steps is not None:
        budgets = _scale_budgets(bundle.stack.budgets, steps)
    normalized, provenance = bundle.generate_heightmap(masks, seed, budgets=budgets)

    payload_hash = hashlib.sha256(masks.tobytes() + str(seed).encode()).hexdigest()
    provenance["payload_hash"] = payload_hash
    shade = hillshade(HeightMap(normalized), azimuth=azimuth, altitude=altitude)
    out_prefix = Path(out)
    _echo_effective_config("generate", None, {
        "seed": seed, "steps": steps, "relief": relief, "azimuth": azimuth,
        "altitude": altitude, "checkpoints": str(checkpoints), "payload_hash": payload_hash,
    })
    paths = write_heightmap_outputs(
        out_prefix, normalized, NormMeta(0.0, relief), shade, provenance
    )
    click.echo(str(paths["heightmap"]))


def _scale_budgets(budgets: dict[str, int], total: int) -> dict[str, int]:
    if total < len(budgets):
        raise click.UsageError(f"--steps must be >= {len(budgets)}")
    base_total = sum(budgets.values())
    scaled = {k: max(1, round(v * total / base_total)) for k, v in budgets.items()}
    # absorb rounding drift into the largest budget
    drift = total - sum(scaled.values())
    largest = max(scaled, key=scaled.get)
    scaled[largest] += drift
    return scaled


@cli.command("evaluate")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Dataset manifest JSON.")
@click.option("--checkpoints", default=None, type=click.Path(file_okay=False),
              help="Artifact directory [default: $TDN_HOME/artifacts].")
@click.option("--mode", type=click.Choice(("multi_level", "single_level", "no_sketch_ae",
                                           "cross_attention", "all")),
              default="all", help="Which generator mode(s) to score.")
@click.option("--split", default="test", help="Manifest split to evaluate.")
@click.option("--out", default=None, type=click.Path(), help="Report path prefix (.json/.md).")
@click.option("--seed", default=None, type=int, help="Per-tile seed root (defaults to the root seed).")
@click.pass_context
def cmd_evaluate(ctx, data, checkpoints, mode, split, out, seed):
    """Score generator modes against a test split and emit the comparison table."""
    from .assets import load_feature_extractor, load_mode_assets
    from .cascade import load_stack
    from .dem import DatasetManifest
    from .evaluation import MODES, ablation_report, evaluate_run, render_report_markdown, save_report
    from .training import load_training_data

    seed = ctx.obj["seed"] if seed is None else seed
    checkpoints = _resolve_checkpoints(checkpoints)
    manifest = DatasetManifest.load(data)
    testset = load_training_data(manifest, split)
    extractor = load_feature_extractor(checkpoints)
    _, sched = load_stack(Path(checkpoints) / "stack.json")

    modes = list(MODES) if mode == "all" else [mode]
    reports = []
    for m in modes:
        assets = load_mode_assets(checkpoints, m)
        reports.append(evaluate_run(m, testset, extractor, assets, sched, seed_root=seed))
        logger.info("mode %s: mse=%.5f fd=%.5f", m, reports[-1].mse_mean, reports[-1].frechet)
    report = ablation_report(reports)
    click.echo(render_report_markdown(report))
    if out:
        json_path, md_path = save_report(out, report)
        click.echo(str(json_path))


@cli.command("serve")
@click.option("--checkpoints", default=None, type=click.Path(file_okay=False),
              help="Artifact directory [default: $TDN_HOME/artifacts].")
@click.option("--store", default=None, type=click.Path(file_okay=False),
              help="Job store directory (defaults to <checkpoints>/jobs).")
@click.option("--host", default="127.0.0.1", help="Bind address.")
@click.option("--port", default=8437, type=int, help="Bind port.")
@click.option("--queue-limit", default=32, type=int, help="Maximum queued jobs before 429.")
@click.pass_context
def cmd_serve(ctx, checkpoints, store, host, port, queue_limit):
    """Serve the sketch-to-terrain generation API over HTTP."""
    import uvicorn

    from .assets import GeneratorBundle
    from .service import create_app

    checkpoints = _resolve_checkpoints(checkpoints)
    bundle = GeneratorBundle.load(checkpoints)
    store_dir = Path(store) if store else Path(checkpoints) / "jobs"
    app = create_app(bundle, store_dir, queue_limit=queue_limit)
    _echo_effective_config("serve", store_dir, {
        "checkpoints": checkpoints, "host": host, "port": port, "queue_limit": queue_limit,
    })
    uvicorn.run(app, host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except (PermissionError, FileNotFoundError, OSError) as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return EXIT_IO
    except (DataValidationError, UnsupportedFormatError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except CheckpointError as exc:
        click.echo(f"checkpoint error: {exc}", err=True)
        return EXIT_CHECKPOINT
    except TerrainError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
