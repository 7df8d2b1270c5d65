"""Sketch guidance encoder: per-sketch encoders, transformer fusion, and
the pooled per-level guidance pyramid."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DataValidationError
from ..sketches import SKETCH_CHANNELS, SketchSet
from .blocks import ResBlock

LEVEL_POOL = {"structural": 4, "intermediate": 2, "fine": 1}


@dataclass
class GuidanceLatents:
    """One guidance latent per cascade level, shape-matched to the terrain
    latents at that level."""

    structural: torch.Tensor
    intermediate: torch.Tensor
    fine: torch.Tensor

    def __post_init__(self):
        fh, fw = self.fine.shape[-2:]
        for name, factor in (("intermediate", 2), ("structural", 4)):
            t = getattr(self, name)
            if tuple(t.shape[-2:]) != (fh // factor, fw // factor):
                raise DataValidationError(f"{name} guidance has shape {tuple(t.shape)}")

    def by_level(self, level: str) -> torch.Tensor:
        return getattr(self, level)


def guidance_pyramid(s_fine: torch.Tensor) -> GuidanceLatents:
    """Average-pooled guidance levels from the fine-level latent."""
    return GuidanceLatents(
        structural=F.avg_pool2d(s_fine, 4),
        intermediate=F.avg_pool2d(s_fine, 2),
        fine=s_fine,
    )


@dataclass(frozen=True)
class GuidanceConfig:
    latent_channels: int = 4
    embed_dim: int = 32
    attn_heads: int = 8
    transformer_layers: int = 2
    encoder_width: int = 8
    share_terrain_encoder: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GuidanceConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def _mask_encoder(width: int, latent_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(1, width, 3, stride=2, padding=1),
        nn.SiLU(),
        nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
        nn.SiLU(),
        nn.Conv2d(2 * width, latent_channels, 3, padding=1),
    )


class SketchGuidanceEncoder(nn.Module):
    """Encode four binary masks into one guidance latent.

    Each mask goes through its own encoder to the terrain latent geometry;
    the four per-position codes, tagged with sketch-type embeddings, are
    fused by a small transformer and projected back to latent channels.
    With ``share_terrain_encoder`` the per-sketch encoders are replaced by
    a frozen copy of the terrain encoder (the shared-autoencoder ablation).
    """

    def __init__(self, config: GuidanceConfig = GuidanceConfig(), terrain_encoder: nn.Module | None = None):
        super().__init__()
        self.config = config
        cz = config.latent_channels
        e = config.embed_dim
        if config.share_terrain_encoder:
            if terrain_encoder is None:
                raise DataValidationError("shared-encoder mode needs the terrain autoencoder")
            self.shared_encoder = copy.deepcopy(terrain_encoder)
            self.shared_encoder.requires_grad_(False)
            self._terrain_ae_config = self.shared_encoder.config.to_dict()
            self.encoders = None
        else:
            self.shared_encoder = None
            self._terrain_ae_config = None
            self.encoders = nn.ModuleList(
                _mask_encoder(config.encoder_width, cz) for _ in SKETCH_CHANNELS
            )
        self.token_proj = nn.Linear(cz, e)
        self.type_embed = nn.Parameter(torch.randn(len(SKETCH_CHANNELS), e) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=e,
            nhead=config.attn_heads,
            dim_feedforward=2 * e,
            dropout=0.0,
            batch_first=True,
        )
        self.transformer = nn.TransformerEncoder(layer, num_layers=config.transformer_layers)
        self.out_proj = nn.Conv2d(e, cz, 3, padding=1)

    def checkpoint_config(self) -> dict:
        config = {"kind": "guidance_encoder", **self.config.to_dict()}
        if self._terrain_ae_config is not None:
            config["terrain_ae_config"] = self._terrain_ae_config
        return config

    def _encode_masks(self, masks: torch.Tensor) -> torch.Tensor:
        if masks.ndim != 4 or masks.shape[1] != len(SKETCH_CHANNELS):
            raise DataValidationError(
                f"expected (B, {len(SKETCH_CHANNELS)}, H, W) masks, got {tuple(masks.shape)}"
            )
        if self.shared_encoder is not None:
            # terrain encoder expects [-1, 1] inputs
            per = [
                self.shared_encoder.encode(2.0 * masks[:, i : i + 1] - 1.0)
                for i in range(len(SKETCH_CHANNELS))
            ]
        else:
            per = [enc(masks[:, i : i + 1]) for i, enc in enumerate(self.encoders)]
        return torch.stack(per, dim=1)  # (B, 4, cz, h, w)

    def forward(self, masks: torch.Tensor) -> torch.Tensor:
        """Fine-level guidance latent, shape (B, latent_channels, H/4, W/4)."""
        z = self._encode_masks(masks.float())
        b, n, cz, h, w = z.shape
        tokens = z.permute(0, 3, 4, 1, 2).reshape(b * h * w, n, cz)
        tokens = self.token_proj(tokens) + self.type_embed[None]
        fused = self.transformer(tokens).mean(dim=1)
        grid = fused.reshape(b, h, w, -1).permute(0, 3, 1, 2)
        return self.out_proj(grid)

    @torch.no_grad()
    def encode_sketchset(self, sketches: SketchSet) -> GuidanceLatents:
        masks = torch.from_numpy(sketches.stacked()).float()[None]
        return guidance_pyramid(self.forward(masks))


class SketchSetDecoder(nn.Module):
    """Reconstruction head used only to pretrain the guidance encoder:
    predicts the four masks (as logits) back from the fused latent."""

    def __init__(self, latent_channels: int = 4, width: int = 16):
        super().__init__()
        self.stem = nn.Conv2d(latent_channels, 2 * width, 3, padding=1)
        self.block1 = ResBlock(2 * width, 2 * width)
        self.block2 = ResBlock(2 * width, width)
        self.out = nn.Conv2d(width, len(SKETCH_CHANNELS), 3, padding=1)

    def forward(self, s_fine: torch.Tensor) -> torch.Tensor:
        h = self.stem(s_fine)
        h = self.block1(h)
        h = F.interpolate(h, scale_factor=2, mode="nearest-exact")
        h = self.block2(h)
        h = F.interpolate(h, scale_factor=2, mode="nearest-exact")
        return self.out(h)
