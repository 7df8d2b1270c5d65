"""Terrain autoencoder: 4x spatial compression into a 4-channel latent."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DataValidationError
from .blocks import ResBlock
from .features import perceptual_loss


@dataclass(frozen=True)
class AEConfig:
    downsample_factor: int = 4
    latent_channels: int = 4
    base_width: int = 16
    pixel_weight: float = 1.0
    perceptual_weight: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AEConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


class TerrainAutoencoder(nn.Module):
    """Fully convolutional encoder/decoder pair with a tanh-bounded output.

    For 144x144 tiles the latent is latent_channels x 36 x 36; the network
    itself works on any size divisible by the downsample factor.
    """

    def __init__(self, config: AEConfig = AEConfig()):
        super().__init__()
        if config.downsample_factor != 4:
            raise DataValidationError("only a 4x downsample factor is supported")
        self.config = config
        w = config.base_width
        cz = config.latent_channels
        self.enc_stem = nn.Conv2d(1, w, 3, stride=2, padding=1)
        self.enc_block1 = ResBlock(w, 2 * w)
        self.enc_down = nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1)
        self.enc_block2 = ResBlock(2 * w, 2 * w)
        self.enc_out = nn.Conv2d(2 * w, cz, 3, padding=1)

        self.dec_stem = nn.Conv2d(cz, 2 * w, 3, padding=1)
        self.dec_block1 = ResBlock(2 * w, 2 * w)
        self.dec_block2 = ResBlock(2 * w, w)
        self.dec_out = nn.Conv2d(w, 1, 3, padding=1)

    def checkpoint_config(self) -> dict:
        return {"kind": "terrain_autoencoder", **self.config.to_dict()}

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise DataValidationError(f"expected (B, 1, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise DataValidationError(f"spatial size {tuple(x.shape[2:])} not divisible by 4")
        h = self.enc_stem(x)
        h = self.enc_block1(h)
        h = self.enc_down(h)
        h = self.enc_block2(h)
        return self.enc_out(h)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.config.latent_channels:
            raise DataValidationError(
                f"expected (B, {self.config.latent_channels}, h, w) latent, got {tuple(z.shape)}"
            )
        h = self.dec_stem(z)
        h = self.dec_block1(h)
        h = F.interpolate(h, scale_factor=2, mode="nearest-exact")
        h = self.dec_block2(h)
        h = F.interpolate(h, scale_factor=2, mode="nearest-exact")
        return torch.tanh(self.dec_out(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


def ae_training_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    phi,
    pixel_weight: float = 1.0,
    perceptual_weight: float = 0.1,
    layers: tuple[str, ...] | None = None,
) -> torch.Tensor:
    """Weighted pixel MSE plus perceptual term."""
    if x.shape != x_hat.shape:
        raise DataValidationError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    loss = pixel_weight * torch.mean((x - x_hat) ** 2)
    if perceptual_weight:
        loss = loss + perceptual_weight * perceptual_loss(x, x_hat, phi, layers)
    return loss
