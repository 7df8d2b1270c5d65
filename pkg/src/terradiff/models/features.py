"""Frozen convolutional feature extractor and the perceptual loss.

The extractor is a small conv net pretrained on the project's own tiles
with a rotation-prediction pretext task (photographic nets fit
single-channel elevation poorly). Anything exposing ``features(x)``,
``layer_shapes``, and ``feature_dim`` can stand in for it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DataValidationError

DEFAULT_PERCEPTUAL_LAYERS = ("block2", "block3")


@dataclass(frozen=True)
class FeatureConfig:
    width: int = 16
    n_rotations: int = 4
    pooled_layers: tuple[str, ...] = DEFAULT_PERCEPTUAL_LAYERS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pooled_layers"] = list(self.pooled_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(
            width=d["width"],
            n_rotations=d["n_rotations"],
            pooled_layers=tuple(d["pooled_layers"]),
        )


class TerrainFeatureNet(nn.Module):
    """Three strided conv blocks plus a rotation-classification head."""

    def __init__(self, config: FeatureConfig = FeatureConfig()):
        super().__init__()
        self.config = config
        w = config.width
        self.block1 = nn.Conv2d(1, w, 3, stride=2, padding=1)
        self.block2 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.block3 = nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1)
        self.head = nn.Linear(4 * w, config.n_rotations)
        self._channels = {"block1": w, "block2": 2 * w, "block3": 4 * w}

    def checkpoint_config(self) -> dict:
        return {"kind": "feature_extractor", **self.config.to_dict()}

    def features(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        h1 = F.relu(self.block1(x))
        h2 = F.relu(self.block2(h1))
        h3 = F.relu(self.block3(h2))
        return {"block1": h1, "block2": h2, "block3": h3}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h3 = self.features(x)["block3"]
        return self.head(h3.mean(dim=(2, 3)))

    def layer_shapes(self, size: int = 144) -> dict[str, tuple[int, int, int]]:
        shapes = {}
        s = size
        for name in ("block1", "block2", "block3"):
            s = (s + 1) // 2
            shapes[name] = (self._channels[name], s, s)
        return shapes

    @property
    def feature_dim(self) -> int:
        return sum(self._channels[name] for name in self.config.pooled_layers)

    @torch.no_grad()
    def feature_vectors(self, x: torch.Tensor) -> np.ndarray:
        """Pooled activations of the configured layers, one row per tile."""
        feats = self.features(x)
        pooled = [feats[name].mean(dim=(2, 3)) for name in self.config.pooled_layers]
        return torch.cat(pooled, dim=1).cpu().numpy()


def perceptual_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    phi,
    layers: tuple[str, ...] | None = None,
) -> torch.Tensor:
    """Sum over layers of ||phi_j(x_hat) - phi_j(x)||_2 / (C_j * H_j * W_j).

    Symmetric in (x, x_hat); zero exactly when the selected activations
    agree (and nondifferentiable there, as any L2 norm is at its root).
    """
    if x.shape != x_hat.shape:
        raise DataValidationError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if layers is None:
        cfg = getattr(phi, "config", None)
        layers = cfg.pooled_layers if cfg is not None else DEFAULT_PERCEPTUAL_LAYERS
    feats_a = phi.features(x)
    feats_b = phi.features(x_hat)
    total = x.new_zeros(())
    for name in layers:
        fa, fb = feats_a[name], feats_b[name]
        numel = fa.shape[1] * fa.shape[2] * fa.shape[3]
        diff = (fb - fa).reshape(fa.shape[0], -1)
        total = total + torch.linalg.vector_norm(diff, dim=1).mean() / numel
    return total
