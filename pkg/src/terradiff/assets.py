"""Artifact directory layout and loading for trained model bundles.

One training run fills a directory like::

    artifacts/
      features.tdnc
      autoencoder.tdnc
      guidance.tdnc
      denoiser_{structural,intermediate,fine}.tdnc
      stack.json
      ablations/single_level/denoiser_fine.tdnc
      ablations/no_sketch_ae/{guidance_shared.tdnc, denoiser_*.tdnc, stack.json}
      ablations/cross_attention/{denoiser_*.tdnc, stack.json}
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np
import torch

from .cascade import SynthesizerStack, cascade_generate, load_stack
from .checkpoint import load_checkpoint
from .diffusion import NoiseSchedule
from .errors import CheckpointError, DataValidationError
from .evaluation import ModeAssets
from .models.autoencoder import TerrainAutoencoder
from .models.denoiser import Denoiser
from .models.features import TerrainFeatureNet
from .models.guidance import SketchGuidanceEncoder, guidance_pyramid

ABLATIONS_DIR = "ablations"


def _load_as(path: Path, expected_type) -> torch.nn.Module:
    if not path.exists():
        raise CheckpointError(f"missing checkpoint {path}")
    model = load_checkpoint(path)
    if not isinstance(model, expected_type):
        raise CheckpointError(f"{path}: expected a {expected_type.__name__} checkpoint")
    return model


@dataclass
class GeneratorBundle:
    """Everything needed to turn sketch masks into a heightmap."""

    ae: TerrainAutoencoder
    guidance_encoder: SketchGuidanceEncoder
    stack: SynthesizerStack
    sched: NoiseSchedule

    @classmethod
    def load(cls, root: str | Path) -> "GeneratorBundle":
        root = Path(root)
        stack, sched = load_stack(root / "stack.json")
        return cls(
            ae=_load_as(root / "autoencoder.tdnc", TerrainAutoencoder),
            guidance_encoder=_load_as(root / "guidance.tdnc", SketchGuidanceEncoder),
            stack=stack,
            sched=sched,
        )

    @torch.no_grad()
    def generate_heightmap(
        self, masks: np.ndarray, seed: int, budgets: dict[str, int] | None = None
    ) -> tuple[np.ndarray, dict]:
        """Masks (4, H, W) in {0, 1} to a normalized heightmap (H, W) plus
        a provenance record."""
        masks = np.asarray(masks)
        if masks.ndim != 3 or masks.shape[0] != 4:
            raise DataValidationError(f"expected (4, H, W) masks, got {masks.shape}")
        stack = self.stack
        if budgets:
            merged = {**stack.budgets, **budgets}
            if any(int(v) < 1 for v in merged.values()):
                raise DataValidationError(f"step budgets must be >= 1, got {merged}")
            stack = dc_replace(stack, budgets={k: int(v) for k, v in merged.items()})
        guidance = guidance_pyramid(
            self.guidance_encoder(torch.from_numpy(masks.astype(np.float32))[None])
        )
        latent = cascade_generate(stack, guidance, self.sched, seed)
        decoded = self.ae.decode(latent)[0, 0].cpu().numpy().astype(np.float64)
        return decoded, stack.provenance(self.sched, seed)


def load_feature_extractor(root: str | Path) -> TerrainFeatureNet:
    return _load_as(Path(root) / "features.tdnc", TerrainFeatureNet)


def load_mode_assets(root: str | Path, mode: str) -> ModeAssets:
    """Assemble the evaluation assets for one report mode from the
    artifact directory layout."""
    root = Path(root)
    ae = _load_as(root / "autoencoder.tdnc", TerrainAutoencoder)
    if mode == "multi_level":
        stack, _ = load_stack(root / "stack.json")
        guidance = _load_as(root / "guidance.tdnc", SketchGuidanceEncoder)
        return ModeAssets(ae=ae, guidance_encoder=guidance, stack=stack)
    if mode == "single_level":
        guidance = _load_as(root / "guidance.tdnc", SketchGuidanceEncoder)
        single = _load_as(root / ABLATIONS_DIR / "single_level" / "denoiser_fine.tdnc", Denoiser)
        return ModeAssets(ae=ae, guidance_encoder=guidance, single=single)
    if mode == "no_sketch_ae":
        mode_dir = root / ABLATIONS_DIR / "no_sketch_ae"
        guidance = _load_as(mode_dir / "guidance_shared.tdnc", SketchGuidanceEncoder)
        stack, _ = load_stack(mode_dir / "stack.json")
        return ModeAssets(ae=ae, guidance_encoder=guidance, stack=stack)
    if mode == "cross_attention":
        guidance = _load_as(root / "guidance.tdnc", SketchGuidanceEncoder)
        stack, _ = load_stack(root / ABLATIONS_DIR / "cross_attention" / "stack.json")
        return ModeAssets(ae=ae, guidance_encoder=guidance, stack=stack)
    raise DataValidationError(f"unknown mode {mode!r}")
