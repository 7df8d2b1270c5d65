"""Training loops, run records, and dataset loading for all model stages."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .cascade import latent_pyramid, renoise_timestep, save_stack_manifest, upsample_latent
from .checkpoint import save_checkpoint
from .dem import DatasetManifest
from .diffusion import NoiseSchedule, denoise_loss, q_sample
from .errors import DataValidationError, TrainingDivergedError
from .heightmap import read_tile
from .levels import DEFAULT_BUDGETS, LEVELS, coarser
from .models.autoencoder import AEConfig, TerrainAutoencoder, ae_training_loss
from .models.denoiser import Denoiser, DenoiserConfig
from .models.features import FeatureConfig, TerrainFeatureNet
from .models.guidance import GuidanceConfig, SketchGuidanceEncoder, SketchSetDecoder
from .seeding import substream
from .sketches import load_sketchset

DEFAULT_RENOISE_ALPHA_BAR = 0.5


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0e-05
    batch_size: int = 6
    max_steps: int = 1000
    seed: int = 0
    checkpoint_interval: int = 100
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataValidationError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise DataValidationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_steps < 0 or self.checkpoint_interval < 1:
            raise DataValidationError("max_steps must be >= 0 and checkpoint_interval >= 1")


class RunRecorder:
    """JSON-lines run record: a header line, then one sample per
    checkpoint interval."""

    def __init__(self, path: str | Path, stage: str, config: TrainConfig, manifest_hash: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.started = time.monotonic()
        self._fh = self.path.open("w")
        self._write(
            {"type": "run", "stage": stage, "config": asdict(config), "manifest_hash": manifest_hash}
        )

    def _write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def sample(self, step: int, loss: float) -> None:
        self._write(
            {"type": "sample", "step": step, "loss": loss, "elapsed_s": round(time.monotonic() - self.started, 3)}
        )

    def close(self) -> None:
        self._fh.close()


def manifest_hash(manifest: DatasetManifest) -> str:
    return hashlib.sha256(manifest.to_json().encode()).hexdigest()


@dataclass
class TrainData:
    """In-memory training pairs loaded from a dataset manifest."""

    ids: list[str]
    tiles: torch.Tensor  # (N, 1, H, W) normalized float32
    masks: torch.Tensor  # (N, 4, H, W) float32 in {0, 1}


def load_training_data(manifest: DatasetManifest, split: str = "train") -> TrainData:
    entries = [e for e in manifest.entries if e.split == split]
    if not entries:
        raise DataValidationError(f"manifest has no {split!r} tiles")
    tiles, masks, ids = [], [], []
    for entry in entries:
        hm = read_tile(manifest.tile_path(entry))
        tiles.append(torch.from_numpy(hm.values.astype(np.float32))[None])
        sketch = load_sketchset(manifest.sketch_prefix(entry))
        masks.append(torch.from_numpy(sketch.stacked().astype(np.float32)))
        ids.append(entry.id)
    return TrainData(ids=ids, tiles=torch.stack(tiles), masks=torch.stack(masks))


def _batch_indices(n: int, batch_size: int, max_steps: int, seed: int):
    """Deterministic shuffled batches, reshuffling each epoch."""
    rng = np.random.default_rng(seed)
    step = 0
    while step < max_steps:
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            if step >= max_steps:
                return
            batch = perm[i : i + batch_size]
            if len(batch) < batch_size and n >= batch_size:
                batch = perm[-batch_size:]
            yield torch.from_numpy(batch.copy())
            step += 1


def _fit(
    stage: str,
    parameters,
    loss_fn: Callable[[torch.Tensor], torch.Tensor],
    n_items: int,
    cfg: TrainConfig,
    recorder: RunRecorder | None,
) -> list[float]:
    """Shared Adam loop with gradient clipping and divergence aborts."""
    params = [p for p in parameters if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    history: list[float] = []

    with torch.no_grad():
        first = torch.randperm(
            n_items, generator=torch.Generator().manual_seed(substream(cfg.seed, "probe"))
        )[: cfg.batch_size]
        initial = float(loss_fn(first))
    if recorder:
        recorder.sample(0, initial)
    history.append(initial)

    for step, batch in enumerate(
        _batch_indices(n_items, cfg.batch_size, cfg.max_steps, substream(cfg.seed, "batches")), start=1
    ):
        optimizer.zero_grad()
        loss = loss_fn(batch)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingDivergedError(f"{stage}: non-finite loss {value} at step {step}")
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        optimizer.step()
        history.append(value)
        if recorder and (step % cfg.checkpoint_interval == 0 or step == cfg.max_steps):
            recorder.sample(step, value)
    return history



def _resolve_source(source) -> tuple["TrainData", str]:
    """Accept either a DatasetManifest or an in-memory TrainData."""
    if isinstance(source, TrainData):
        return source, ""
    return load_training_data(source), manifest_hash(source)

def train_feature_extractor(
    source: DatasetManifest | TrainData,
    cfg: TrainConfig,
    out_dir: str | Path,
    model_cfg: FeatureConfig = FeatureConfig(),
) -> tuple[TerrainFeatureNet, Path]:
    """Rotation-prediction pretext training for the frozen feature net."""
    data, mhash = _resolve_source(source)
    torch.manual_seed(substream(cfg.seed, "init"))
    model = TerrainFeatureNet(model_cfg)
    gen = torch.Generator().manual_seed(substream(cfg.seed, "noise"))
    ce = torch.nn.CrossEntropyLoss()

    def loss_fn(batch):
        x = data.tiles[batch]
        k = torch.randint(0, 4, (x.shape[0],), generator=gen)
        rotated = torch.stack([torch.rot90(x[i], int(k[i]), dims=(1, 2)) for i in range(x.shape[0])])
        return ce(model(rotated), k)

    out_dir = Path(out_dir)
    recorder = RunRecorder(out_dir / "features.runlog", "features", cfg, mhash)
    try:
        _fit("features", model.parameters(), loss_fn, len(data.ids), cfg, recorder)
    finally:
        recorder.close()
    model.eval()
    model.requires_grad_(False)
    return model, save_checkpoint(model, out_dir / "features.tdnc")


def train_autoencoder(
    source: DatasetManifest | TrainData,
    cfg: TrainConfig,
    phi: TerrainFeatureNet,
    out_dir: str | Path,
    model_cfg: AEConfig = AEConfig(),
) -> tuple[TerrainAutoencoder, Path]:
    """Reconstruction training of the terrain autoencoder (pixel +
    perceptual objective)."""
    data, mhash = _resolve_source(source)
    torch.manual_seed(substream(cfg.seed, "init"))
    model = TerrainAutoencoder(model_cfg)

    def loss_fn(batch):
        x = data.tiles[batch]
        return ae_training_loss(
            x, model(x), phi,
            pixel_weight=model_cfg.pixel_weight,
            perceptual_weight=model_cfg.perceptual_weight,
        )

    out_dir = Path(out_dir)
    recorder = RunRecorder(out_dir / "autoencoder.runlog", "autoencoder", cfg, mhash)
    try:
        _fit("autoencoder", model.parameters(), loss_fn, len(data.ids), cfg, recorder)
    finally:
        recorder.close()
    model.eval()
    return model, save_checkpoint(model, out_dir / "autoencoder.tdnc")


def train_sketch_encoder(
    source: DatasetManifest | TrainData,
    cfg: TrainConfig,
    out_dir: str | Path,
    model_cfg: GuidanceConfig = GuidanceConfig(),
    terrain_ae: TerrainAutoencoder | None = None,
) -> tuple[SketchGuidanceEncoder, Path]:
    """Pretrain the guidance encoder by reconstructing all four masks from
    the fused latent; the reconstruction head is discarded afterwards."""
    data, mhash = _resolve_source(source)
    torch.manual_seed(substream(cfg.seed, "init"))
    model = SketchGuidanceEncoder(model_cfg, terrain_encoder=terrain_ae)
    decoder = SketchSetDecoder(model_cfg.latent_channels)
    bce = torch.nn.BCEWithLogitsLoss()

    def loss_fn(batch):
        masks = data.masks[batch]
        return bce(decoder(model(masks)), masks)

    out_dir = Path(out_dir)
    name = "guidance_shared" if model_cfg.share_terrain_encoder else "guidance"
    recorder = RunRecorder(out_dir / f"{name}.runlog", name, cfg, mhash)
    try:
        params = list(model.parameters()) + list(decoder.parameters())
        _fit(name, params, loss_fn, len(data.ids), cfg, recorder)
    finally:
        recorder.close()
    model.eval()
    return model, save_checkpoint(model, out_dir / f"{name}.tdnc")


@dataclass
class LatentDataset:
    """Precomputed (terrain latent pyramid, guidance pyramid) pairs."""

    ids: list[str]
    latents: dict[str, torch.Tensor]
    guidance: dict[str, torch.Tensor]

    @property
    def n(self) -> int:
        return len(self.ids)


@torch.no_grad()
def prepare_latent_dataset(
    data: TrainData, ae: TerrainAutoencoder, guidance_encoder: SketchGuidanceEncoder
) -> LatentDataset:
    fine = ae.encode(data.tiles)
    s_fine = guidance_encoder(data.masks)
    return LatentDataset(
        ids=list(data.ids),
        latents=latent_pyramid(fine),
        guidance=latent_pyramid(s_fine),
    )


def train_level(
    level: str,
    dataset: LatentDataset,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    out_dir: str | Path,
    denoiser_cfg: DenoiserConfig | None = None,
    renoise_alpha_bar: float = DEFAULT_RENOISE_ALPHA_BAR,
) -> tuple[Denoiser, Path]:
    """Train one level's denoiser.

    Non-structural levels also condition on the next-coarser ground-truth
    latent, upsampled 2x and noise-augmented up to the re-noise start so
    that training inputs match what the cascade feeds at generation time.
    """
    denoiser_cfg = denoiser_cfg or DenoiserConfig(
        level=level, prev_conditioning=level != "structural"
    )
    if denoiser_cfg.level != level:
        raise DataValidationError(f"denoiser config level {denoiser_cfg.level!r} != {level!r}")
    x0_all = dataset.latents[level]
    s_all = dataset.guidance[level]

    prev_clean = None
    t_mid = renoise_timestep(sched, renoise_alpha_bar)
    coarse = coarser(level)
    if denoiser_cfg.prev_conditioning:
        prev_clean = upsample_latent(dataset.latents[coarse])

    torch.manual_seed(substream(cfg.seed, f"init:{level}"))
    model = Denoiser(denoiser_cfg)
    gen = torch.Generator().manual_seed(substream(cfg.seed, f"noise:{level}"))

    def loss_fn(batch):
        x0 = x0_all[batch]
        s = s_all[batch]
        prev = None
        if prev_clean is not None:
            clean = prev_clean[batch]
            t_aug = torch.randint(0, t_mid + 1, (len(batch),), generator=gen)
            eps = torch.empty_like(clean).normal_(generator=gen)
            noisy = q_sample(clean, t_aug.clamp(min=1), eps, sched)
            keep_clean = (t_aug == 0).reshape(-1, 1, 1, 1)
            prev = torch.where(keep_clean, clean, noisy)
        return denoise_loss(model, x0, s, sched, gen, prev=prev)

    out_dir = Path(out_dir)
    recorder = RunRecorder(out_dir / f"denoiser_{level}.runlog", f"denoiser:{level}", cfg, "")
    try:
        _fit(f"denoiser:{level}", model.parameters(), loss_fn, dataset.n, cfg, recorder)
    finally:
        recorder.close()
    model.eval()
    return model, save_checkpoint(model, out_dir / f"denoiser_{level}.tdnc")


def train_stack(
    source: DatasetManifest | TrainData,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    ae: TerrainAutoencoder,
    guidance_encoder: SketchGuidanceEncoder,
    out_dir: str | Path,
    level_cfgs: dict[str, DenoiserConfig] | None = None,
    budgets: dict[str, int] | None = None,
    renoise_alpha_bar: float = DEFAULT_RENOISE_ALPHA_BAR,
) -> Path:
    """Train the three synthesizers separately (independent seed streams)
    and write a stack manifest next to the checkpoints."""
    from .cascade import SynthesizerStack

    data, _ = _resolve_source(source)
    dataset = prepare_latent_dataset(data, ae, guidance_encoder)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    denoisers = {}
    checkpoints = {}
    for level in LEVELS:
        level_cfg = replace(cfg, seed=substream(cfg.seed, f"level:{level}"))
        dcfg = (level_cfgs or {}).get(level)
        model, ckpt = train_level(
            level, dataset, sched, level_cfg, out_dir,
            denoiser_cfg=dcfg, renoise_alpha_bar=renoise_alpha_bar,
        )
        denoisers[level] = model
        checkpoints[level] = ckpt.name

    stack = SynthesizerStack(
        denoisers=denoisers,
        budgets=dict(budgets or DEFAULT_BUDGETS),
        renoise_alpha_bar=renoise_alpha_bar,
    )
    return save_stack_manifest(out_dir / "stack.json", stack, sched, checkpoints)
