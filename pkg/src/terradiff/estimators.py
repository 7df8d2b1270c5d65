"""scikit-learn style estimator facade over the toolkit.

Exposes the sketch extractor, the terrain autoencoder, and the full
sketch-guided generator as fit/transform/sample estimators so they
compose with sklearn pipelines and parameter search.
"""

from __future__ import annotations

import tempfile

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .cascade import SynthesizerStack, cascade_generate
from .diffusion import make_cosine_schedule
from .errors import DataValidationError
from .heightmap import HeightMap
from .levels import LEVELS, TILE_SIZE
from .models.autoencoder import AEConfig
from .models.denoiser import DenoiserConfig
from .models.features import FeatureConfig
from .models.guidance import GuidanceConfig, guidance_pyramid
from .seeding import substream
from .sketches import SKETCH_CHANNELS, SketchConfig, build_sketchset
from .training import (
    TrainConfig,
    TrainData,
    prepare_latent_dataset,
    train_autoencoder,
    train_feature_extractor,
    train_level,
    train_sketch_encoder,
)


def check_tile_array(X, normalized: bool = True) -> np.ndarray:
    """Validate (n, H, W) elevation grids; returns a float64 copy."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise DataValidationError(f"expected (n, H, W) tiles, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataValidationError("tiles contain NaN or Inf")
    if normalized and (X.min() < -1.0 - 1e-6 or X.max() > 1.0 + 1e-6):
        raise DataValidationError("normalized tiles must lie in [-1, 1]")
    return X


def check_mask_array(S) -> np.ndarray:
    """Validate (n, 4, H, W) binary sketch masks; returns uint8."""
    S = np.asarray(S)
    if S.ndim != 4 or S.shape[1] != len(SKETCH_CHANNELS):
        raise DataValidationError(f"expected (n, 4, H, W) masks, got shape {S.shape}")
    if not np.isin(S, (0, 1)).all():
        raise DataValidationError("masks must be binary")
    return S.astype(np.uint8)


def _require_fitted(estimator, attr: str):
    if not hasattr(estimator, attr):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )


class SketchExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer from elevation tiles to four sketch masks."""

    def __init__(self, river_quantile=0.95, ridge_quantile=0.95, peak_window=9,
                 basin_window=9, prominence_frac=0.02):
        self.river_quantile = river_quantile
        self.ridge_quantile = ridge_quantile
        self.peak_window = peak_window
        self.basin_window = basin_window
        self.prominence_frac = prominence_frac

    def fit(self, X, y=None):
        check_tile_array(X, normalized=False)
        return self

    def transform(self, X) -> np.ndarray:
        X = check_tile_array(X, normalized=False)
        cfg = SketchConfig(
            river_quantile=self.river_quantile,
            ridge_quantile=self.ridge_quantile,
            peak_window=self.peak_window,
            basin_window=self.basin_window,
            prominence_frac=self.prominence_frac,
        )
        return np.stack([build_sketchset(HeightMap(x), cfg).stacked() for x in X])


def _as_train_data(X: np.ndarray, S: np.ndarray | None) -> TrainData:
    n = X.shape[0]
    tiles = torch.from_numpy(X.astype(np.float32))[:, None]
    if S is None:
        masks = torch.zeros((n, len(SKETCH_CHANNELS)) + X.shape[1:], dtype=torch.float32)
    else:
        masks = torch.from_numpy(S.astype(np.float32))
    return TrainData(ids=[f"mem-{i:05d}" for i in range(n)], tiles=tiles, masks=masks)


class TerrainAutoencoderEstimator(BaseEstimator, TransformerMixin):
    """Autoencoder as a transformer: tiles -> latents -> tiles.

    fit() first pretrains the rotation-pretext feature net on the given
    tiles, then trains the autoencoder with the pixel + perceptual loss.
    """

    def __init__(self, base_width=16, feature_width=16, perceptual_weight=0.1,
                 learning_rate=1e-3, batch_size=6, max_steps=300, pretext_steps=100, seed=0):
        self.base_width = base_width
        self.feature_width = feature_width
        self.perceptual_weight = perceptual_weight
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.pretext_steps = pretext_steps
        self.seed = seed

    def fit(self, X, y=None):
        X = check_tile_array(X)
        data = _as_train_data(X, None)
        with tempfile.TemporaryDirectory() as scratch:
            phi, _ = train_feature_extractor(
                data,
                TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                            max_steps=self.pretext_steps, seed=substream(self.seed, "phi")),
                scratch,
                FeatureConfig(width=self.feature_width),
            )
            ae, _ = train_autoencoder(
                data,
                TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                            max_steps=self.max_steps, seed=substream(self.seed, "ae")),
                phi,
                scratch,
                AEConfig(base_width=self.base_width, perceptual_weight=self.perceptual_weight),
            )
        self.feature_extractor_ = phi
        self.autoencoder_ = ae
        return self

    @torch.no_grad()
    def transform(self, X) -> np.ndarray:
        _require_fitted(self, "autoencoder_")
        X = check_tile_array(X)
        z = self.autoencoder_.encode(torch.from_numpy(X.astype(np.float32))[:, None])
        return z.numpy()

    @torch.no_grad()
    def inverse_transform(self, Z) -> np.ndarray:
        _require_fitted(self, "autoencoder_")
        decoded = self.autoencoder_.decode(torch.from_numpy(np.asarray(Z, dtype=np.float32)))
        return decoded[:, 0].numpy().astype(np.float64)


class SketchGuidedTerrainGenerator(BaseEstimator):
    """End-to-end generator estimator: fit(tiles, masks), sample(masks)."""

    def __init__(self, ae_width=16, feature_width=16, guidance_width=8, embed_dim=32,
                 denoiser_width=32, timesteps=1000, budgets=(16, 10, 10),
                 learning_rate=1e-3, batch_size=6, ae_steps=300, pretext_steps=100,
                 guidance_steps=200, denoiser_steps=400, seed=0):
        self.ae_width = ae_width
        self.feature_width = feature_width
        self.guidance_width = guidance_width
        self.embed_dim = embed_dim
        self.denoiser_width = denoiser_width
        self.timesteps = timesteps
        self.budgets = budgets
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.ae_steps = ae_steps
        self.pretext_steps = pretext_steps
        self.guidance_steps = guidance_steps
        self.denoiser_steps = denoiser_steps
        self.seed = seed

    def _cfg(self, steps: int, name: str) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_steps=steps, seed=substream(self.seed, name))

    def fit(self, X, S):
        X = check_tile_array(X)
        S = check_mask_array(S)
        if X.shape[0] != S.shape[0]:
            raise DataValidationError("need one sketch set per tile")
        data = _as_train_data(X, S)
        self.schedule_ = make_cosine_schedule(self.timesteps)
        with tempfile.TemporaryDirectory() as scratch:
            phi, _ = train_feature_extractor(
                data, self._cfg(self.pretext_steps, "phi"), scratch,
                FeatureConfig(width=self.feature_width))
            ae, _ = train_autoencoder(
                data, self._cfg(self.ae_steps, "ae"), phi, scratch,
                AEConfig(base_width=self.ae_width))
            guidance, _ = train_sketch_encoder(
                data, self._cfg(self.guidance_steps, "guidance"), scratch,
                GuidanceConfig(encoder_width=self.guidance_width, embed_dim=self.embed_dim))
            dataset = prepare_latent_dataset(data, ae, guidance)
            denoisers = {}
            for level in LEVELS:
                model, _ = train_level(
                    level, dataset, self.schedule_,
                    self._cfg(self.denoiser_steps, f"level:{level}"), scratch,
                    denoiser_cfg=DenoiserConfig(
                        level=level, base_width=self.denoiser_width,
                        prev_conditioning=level != "structural"),
                )
                denoisers[level] = model
        self.feature_extractor_ = phi
        self.autoencoder_ = ae
        self.guidance_encoder_ = guidance
        self.stack_ = SynthesizerStack(
            denoisers=denoisers, budgets=dict(zip(LEVELS, self.budgets)))
        return self

    @torch.no_grad()
    def sample(self, S, seed: int = 0) -> np.ndarray:
        """Generate one normalized heightmap per sketch set. Rows are
        sampled independently, so results do not depend on batching."""
        _require_fitted(self, "stack_")
        S = check_mask_array(S)
        outputs = []
        for i, masks in enumerate(S):
            guidance = guidance_pyramid(
                self.guidance_encoder_(torch.from_numpy(masks.astype(np.float32))[None])
            )
            latent = cascade_generate(
                self.stack_, guidance, self.schedule_, substream(seed, f"row:{i}")
            )
            outputs.append(self.autoencoder_.decode(latent)[0, 0].numpy())
        return np.stack(outputs).astype(np.float64)

    def predict(self, S) -> np.ndarray:
        return self.sample(S, seed=self.seed)
