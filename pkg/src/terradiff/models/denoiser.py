"""Per-level denoising U-Net with direct (concatenated) sketch guidance."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DataValidationError
from ..levels import LEVEL_SIZES, check_level
from .blocks import (
    CrossAttention2d,
    Downsample,
    ResBlock,
    SelfAttention2d,
    Upsample,
    group_norm,
    timestep_embedding,
)

GUIDANCE_MODES = ("concat", "cross_attention")


@dataclass(frozen=True)
class DenoiserConfig:
    level: str
    latent_channels: int = 4
    base_width: int = 32
    channel_mults: tuple[int, int, int] = (1, 2, 2)
    attn_heads: int = 8
    time_dim: int = 128
    guidance_mode: str = "concat"
    prev_conditioning: bool = False
    level_size: int = 0  # 0 = derive from level

    def __post_init__(self):
        check_level(self.level)
        if self.guidance_mode not in GUIDANCE_MODES:
            raise DataValidationError(f"guidance_mode must be one of {GUIDANCE_MODES}")
        if len(self.channel_mults) != 3:
            raise DataValidationError("exactly three down/up stages are supported")

    @property
    def resolved_size(self) -> int:
        return self.level_size or LEVEL_SIZES[self.level]

    @property
    def in_channels(self) -> int:
        cz = self.latent_channels
        guided = 2 * cz if self.guidance_mode == "concat" else cz
        return guided + (cz if self.prev_conditioning else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = {k: d[k] for k in cls.__dataclass_fields__}
        d["channel_mults"] = tuple(d["channel_mults"])
        return cls(**d)


class Denoiser(nn.Module):
    """Noise predictor: three downsampling stages, an attention middle
    block, and three upsampling stages with skip connections.

    Guidance enters by channel concatenation through the stem convolution
    plus an additive skip path around the first block; the cross-attention
    mode (used by one ablation) attends to guidance tokens in the middle
    block instead.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        cz = config.latent_channels
        w = config.base_width
        widths = [w * m for m in config.channel_mults]

        self.time_mlp = nn.Sequential(
            nn.Linear(config.time_dim, config.time_dim),
            nn.SiLU(),
            nn.Linear(config.time_dim, config.time_dim),
        )

        self.stem = nn.Conv2d(config.in_channels, w, 3, padding=1)
        self.guidance_skip = (
            nn.Conv2d(cz, w, 3, padding=1) if config.guidance_mode == "concat" else None
        )

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev_w = w
        for width in widths:
            self.down_blocks.append(ResBlock(prev_w, width, config.time_dim))
            self.downsamples.append(Downsample(width))
            prev_w = width

        mid = widths[-1]
        self.mid_block1 = ResBlock(mid, mid, config.time_dim)
        self.mid_attn = SelfAttention2d(mid, config.attn_heads)
        self.mid_cross = (
            CrossAttention2d(mid, cz, config.attn_heads)
            if config.guidance_mode == "cross_attention"
            else None
        )
        self.mid_block2 = ResBlock(mid, mid, config.time_dim)

        self.upsamples = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        out_widths = [widths[1], widths[0], w]
        for skip_w, out_w in zip(reversed(widths), out_widths):
            self.upsamples.append(Upsample(prev_w))
            self.up_blocks.append(ResBlock(prev_w + skip_w, out_w, config.time_dim))
            prev_w = out_w

        self.out_norm = group_norm(prev_w)
        self.out_conv = nn.Conv2d(prev_w, cz, 3, padding=1)

    @property
    def level(self) -> str:
        return self.config.level

    @property
    def level_size(self) -> int:
        return self.config.resolved_size

    def checkpoint_config(self) -> dict:
        return {"kind": "denoiser", **self.config.to_dict()}

    def forward(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        s: torch.Tensor | None = None,
        prev: torch.Tensor | None = None,
    ) -> torch.Tensor:
        cfg = self.config
        size = self.level_size
        if tuple(x_t.shape[-2:]) != (size, size):
            raise DataValidationError(
                f"{cfg.level} denoiser expects {size}x{size} latents, got {tuple(x_t.shape[-2:])}"
            )
        if s is None:
            raise DataValidationError("sketch guidance is required")
        if s.shape[-2:] != x_t.shape[-2:]:
            raise DataValidationError("guidance spatial shape must match the latent")
        if cfg.prev_conditioning and prev is None:
            raise DataValidationError(f"{cfg.level} denoiser needs the coarser-level latent")
        if not cfg.prev_conditioning and prev is not None:
            raise DataValidationError(f"{cfg.level} denoiser takes no coarser-level input")

        parts = [x_t]
        if cfg.guidance_mode == "concat":
            parts.append(s)
        if cfg.prev_conditioning:
            if prev.shape[-2:] != x_t.shape[-2:]:
                raise DataValidationError("coarser-level latent spatial shape must match")
            parts.append(prev)

        temb = self.time_mlp(timestep_embedding(t, cfg.time_dim).to(x_t.dtype))
        h = self.stem(torch.cat(parts, dim=1))
        if self.guidance_skip is not None:
            h = h + self.guidance_skip(s)

        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, temb)
            skips.append(h)
            h = down(h)

        h = self.mid_block1(h, temb)
        h = self.mid_attn(h)
        if self.mid_cross is not None:
            tokens = s.flatten(2).transpose(1, 2)  # (B, H*W, cz)
            h = self.mid_cross(h, tokens)
        h = self.mid_block2(h, temb)

        for up, block in zip(self.upsamples, self.up_blocks):
            skip = skips.pop()
            h = up(h, size=skip.shape[-2:])
            h = block(torch.cat([h, skip], dim=1), temb)

        return self.out_conv(F.silu(self.out_norm(h)))
