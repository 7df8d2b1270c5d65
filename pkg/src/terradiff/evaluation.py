"""Metrics (MSE, Fréchet distance), hillshade rendering, and the
ablation/comparison report harness."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .cascade import SynthesizerStack, cascade_generate, single_level_generate
from .errors import DataValidationError
from .heightmap import HeightMap
from .models.autoencoder import TerrainAutoencoder
from .models.denoiser import Denoiser
from .models.features import TerrainFeatureNet
from .models.guidance import SketchGuidanceEncoder, guidance_pyramid
from .seeding import tile_seed
from .training import TrainData

MODES = ("multi_level", "single_level", "no_sketch_ae", "cross_attention")

# Published full-scale reference, shown in report footers for context only.
REFERENCE_ROW = {"label": "TDN (published reference)", "fid": 0.44023, "mse": 0.00590}
REFERENCE_NOTE = "not reproduced at desk scale"


@dataclass(frozen=True)
class MetricReport:
    mode: str
    mse_mean: float
    frechet: float
    sample_count: int
    extractor_id: str
    config_hash: str

    def to_dict(self) -> dict:
        return asdict(self)


def mse(a, b) -> float:
    """Mean squared difference between two grids (HeightMaps or arrays)."""
    av = a.values if isinstance(a, HeightMap) else np.asarray(a)
    bv = b.values if isinstance(b, HeightMap) else np.asarray(b)
    if av.shape != bv.shape:
        raise DataValidationError(f"shape mismatch: {av.shape} vs {bv.shape}")
    return float(np.mean((av - bv) ** 2))


def _sqrt_psd(matrix: np.ndarray, tol: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    floor = -tol * max(1.0, float(np.abs(vals).max(initial=1.0)))
    if vals.min(initial=0.0) < floor:
        raise DataValidationError(f"matrix square root failed: eigenvalue {vals.min()} below {floor}")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray, tol: float = 1e-6) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the matrix square
    root taken by eigendecomposition of the symmetrized product
    S2^(1/2) S1 S2^(1/2). Negative eigenvalue dust within tolerance is
    zeroed; anything beyond raises.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DataValidationError(f"feature sets must be (n, d) with equal d: {a.shape} vs {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DataValidationError("need at least 2 feature vectors per set")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))

    root_b = _sqrt_psd(cov_b, tol)
    inner = root_b @ cov_a @ root_b
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    floor = -tol * max(1.0, float(np.abs(vals).max(initial=1.0)))
    if vals.min(initial=0.0) < floor:
        raise DataValidationError(f"matrix square root failed: eigenvalue {vals.min()} below {floor}")
    tr_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())

    diff = mu_a - mu_b
    fd = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(fd, 0.0)


def terrain_features(tiles, extractor: TerrainFeatureNet) -> np.ndarray:
    """Pooled frozen-extractor activations, one row per tile."""
    if isinstance(tiles, torch.Tensor):
        batch = tiles
    else:
        arrays = [t.values if isinstance(t, HeightMap) else np.asarray(t) for t in tiles]
        batch = torch.from_numpy(np.stack(arrays).astype(np.float32))[:, None]
    return extractor.feature_vectors(batch)


def hillshade(dem: HeightMap, azimuth: float = 315.0, altitude: float = 45.0) -> np.ndarray:
    """Lambertian hillshade in [0, 1].

    Azimuth is degrees clockwise from north (row 0 faces north), altitude
    is degrees above the horizon. Slope and aspect come from central
    differences scaled by the cell size.
    """
    z = dem.values
    d_row, d_col = np.gradient(z, dem.cell_scale)
    gx = d_col          # east
    gy = -d_row         # north
    slope = np.arctan(np.hypot(gx, gy))
    aspect = np.arctan2(-gx, -gy)  # azimuth of steepest descent
    zenith = np.radians(90.0 - altitude)
    az = np.radians(azimuth % 360.0)
    shaded = np.cos(zenith) * np.cos(slope) + np.sin(zenith) * np.sin(slope) * np.cos(az - aspect)
    return np.clip(shaded, 0.0, 1.0)


@dataclass
class ModeAssets:
    """Everything one generator mode needs at evaluation time."""

    ae: TerrainAutoencoder
    guidance_encoder: SketchGuidanceEncoder
    stack: SynthesizerStack | None = None
    single: Denoiser | None = None

    def require(self, mode: str):
        if mode not in MODES:
            raise DataValidationError(f"unknown mode {mode!r}, expected one of {MODES}")
        if mode == "single_level":
            if self.single is None:
                raise DataValidationError("missing checkpoints for mode single_level")
        elif self.stack is None:
            raise DataValidationError(f"missing checkpoints for mode {mode}")


@torch.no_grad()
def generate_tile(
    assets: ModeAssets,
    mode: str,
    masks: torch.Tensor,
    sched,
    seed: int,
) -> np.ndarray:
    """Generate one normalized heightmap (H, W) from (4, H, W) masks."""
    assets.require(mode)
    guidance = guidance_pyramid(assets.guidance_encoder(masks[None].float()))
    if mode == "single_level":
        latent = single_level_generate(assets.single, guidance, sched, seed)
    else:
        latent = cascade_generate(assets.stack, guidance, sched, seed)
    decoded = assets.ae.decode(latent)
    return decoded[0, 0].cpu().numpy().astype(np.float64)


@torch.no_grad()
def evaluate_run(
    mode: str,
    testset: TrainData,
    extractor: TerrainFeatureNet,
    assets: ModeAssets,
    sched,
    seed_root: int = 0,
) -> MetricReport:
    """Generate from each test pair's sketches (per-tile fixed seeds),
    score MSE against ground truth and the Fréchet distance between
    generated and real feature sets."""
    assets.require(mode)
    if len(testset.ids) < 2:
        raise DataValidationError("evaluation needs at least 2 test tiles")

    generated = []
    errors = []
    for i, tile_id in enumerate(testset.ids):
        out = generate_tile(assets, mode, testset.masks[i], sched, tile_seed(seed_root, tile_id))
        generated.append(out)
        errors.append(mse(out, testset.tiles[i, 0].numpy()))

    gen_batch = torch.from_numpy(np.stack(generated).astype(np.float32))[:, None]
    fd = frechet_distance(
        terrain_features(gen_batch, extractor),
        terrain_features(testset.tiles, extractor),
    )
    state = extractor.state_dict()
    extractor_id = hashlib.sha256(
        b"".join(v.numpy().tobytes() for v in state.values())
    ).hexdigest()[:16]
    config = {
        "mode": mode,
        "seed_root": seed_root,
        "schedule": sched.describe(),
        "budgets": dict(assets.stack.budgets) if assets.stack else {"fine": 36},
    }
    config_hash = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
    return MetricReport(
        mode=mode,
        mse_mean=float(np.mean(errors)),
        frechet=fd,
        sample_count=len(errors),
        extractor_id=extractor_id,
        config_hash=config_hash,
    )


def ablation_report(reports: list[MetricReport]) -> dict:
    """Assemble the per-mode comparison table plus the published reference
    footer (shown for context, never asserted at desk scale)."""
    return {
        "columns": ["mode", "FD (terrain features)", "MSE"],
        "rows": [
            {"mode": r.mode, "fd": r.frechet, "mse": r.mse_mean, "n": r.sample_count}
            for r in reports
        ],
        "reference": {**REFERENCE_ROW, "note": REFERENCE_NOTE},
    }


def render_report_markdown(report: dict) -> str:
    lines = [
        "| mode | FD (terrain features) | MSE | n |",
        "| --- | --- | --- | --- |",
    ]
    for row in report["rows"]:
        lines.append(f"| {row['mode']} | {row['fd']:.5f} | {row['mse']:.5f} | {row['n']} |")
    ref = report["reference"]
    lines.append("")
    lines.append(f"{ref['label']}: FID {ref['fid']:.5f}, MSE {ref['mse']:.5f} ({ref['note']}).")
    return "\n".join(lines) + "\n"


def save_report(path: str | Path, report: dict) -> tuple[Path, Path]:
    path = Path(path)
    json_path = path.with_suffix(".json")
    md_path = path.with_suffix(".md")
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    md_path.write_text(render_report_markdown(report))
    return json_path, md_path
