"""Coarse-to-fine generation through the three-level synthesizer stack."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .diffusion import NoiseSchedule, SamplerPlan, q_sample, sample
from .errors import DataValidationError
from .levels import DEFAULT_BUDGETS, LEVELS, POOL_FACTORS, check_level
from .models.denoiser import Denoiser
from .models.guidance import GuidanceLatents
from .seeding import substream

DEFAULT_RENOISE_ALPHA_BAR = 0.5


def level_latent(x_fine: torch.Tensor, level: str) -> torch.Tensor:
    """Project a fine-level latent onto a cascade level by average pooling."""
    check_level(level)
    factor = POOL_FACTORS[level]
    if factor == 1:
        return x_fine
    return F.avg_pool2d(x_fine, factor)


def latent_pyramid(x_fine: torch.Tensor) -> dict[str, torch.Tensor]:
    return {level: level_latent(x_fine, level) for level in LEVELS}


def renoise_timestep(sched: NoiseSchedule, target_alpha_bar: float) -> int:
    """Timestep whose cumulative alpha is closest to the target."""
    return int(np.argmin(np.abs(sched.alpha_bar[1:] - target_alpha_bar))) + 1


def upsample_latent(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest-exact")


@dataclass
class SynthesizerStack:
    """Three separately trained denoisers plus their sampling budgets."""

    denoisers: dict[str, Denoiser]
    budgets: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    renoise_alpha_bar: float = DEFAULT_RENOISE_ALPHA_BAR
    stack_id: str = ""

    def __post_init__(self):
        missing = [lv for lv in LEVELS if lv not in self.denoisers]
        if missing:
            raise DataValidationError(f"stack is missing levels: {missing}")
        for level, model in self.denoisers.items():
            if model.level != level:
                raise DataValidationError(f"denoiser under key {level!r} reports level {model.level!r}")

    @property
    def total_steps(self) -> int:
        return sum(self.budgets[lv] for lv in LEVELS)

    def plans(self, sched: NoiseSchedule) -> dict[str, SamplerPlan]:
        t_mid = renoise_timestep(sched, self.renoise_alpha_bar)
        return {
            "structural": SamplerPlan.uniform(sched.T, self.budgets["structural"]),
            "intermediate": SamplerPlan.uniform(sched.T, self.budgets["intermediate"], t_start=t_mid),
            "fine": SamplerPlan.uniform(sched.T, self.budgets["fine"], t_start=t_mid),
        }

    def provenance(self, sched: NoiseSchedule, seed: int) -> dict:
        plans = self.plans(sched)
        return {
            "seed": seed,
            "stack_id": self.stack_id,
            "schedule": sched.describe(),
            "renoise_alpha_bar": self.renoise_alpha_bar,
            "plan": {
                "T": sched.T,
                "level_budgets": dict(self.budgets),
                "stride_steps": {lv: list(plans[lv].steps) for lv in LEVELS},
            },
        }


def cascade_generate(
    stack: SynthesizerStack,
    guidance: GuidanceLatents,
    sched: NoiseSchedule,
    seed: int,
) -> torch.Tensor:
    """Generate a fine-level latent coarse-to-fine.

    The structural level samples from pure noise over its full-range plan;
    each finer level upsamples the previous result 2x, re-noises it to the
    configured alpha-bar point, and denoises conditioned on both its
    guidance slice and the clean upsampled coarser result.
    """
    plans = stack.plans(sched)
    t_mid = renoise_timestep(sched, stack.renoise_alpha_bar)

    x = sample(
        stack.denoisers["structural"],
        guidance.structural,
        sched,
        plans["structural"],
        seed=substream(seed, "structural"),
    )
    for level in ("intermediate", "fine"):
        prev = upsample_latent(x)
        gen = torch.Generator().manual_seed(substream(seed, f"renoise-{level}"))
        eps = torch.empty_like(prev).normal_(generator=gen)
        x_init = q_sample(prev, t_mid, eps, sched)
        x = sample(
            stack.denoisers[level],
            guidance.by_level(level),
            sched,
            plans[level],
            seed=substream(seed, level),
            prev=prev,
            x_init=x_init,
        )
    return x


def single_level_generate(
    denoiser: Denoiser,
    guidance: GuidanceLatents,
    sched: NoiseSchedule,
    seed: int,
    n_steps: int = 36,
) -> torch.Tensor:
    """Ablation path: one fine-level denoiser runs the whole budget."""
    plan = SamplerPlan.uniform(sched.T, n_steps)
    return sample(denoiser, guidance.fine, sched, plan, seed=substream(seed, "fine"))


def save_stack_manifest(
    path: str | Path,
    stack: SynthesizerStack,
    sched: NoiseSchedule,
    checkpoints: dict[str, str],
) -> Path:
    path = Path(path)
    payload = {
        "levels": [
            {
                "tag": level,
                "checkpoint": checkpoints[level],
                "budget": stack.budgets[level],
                "renoise_alpha_bar": stack.renoise_alpha_bar,
            }
            for level in LEVELS
        ],
        "schedule_ref": sched.describe(),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def load_stack(path: str | Path) -> tuple[SynthesizerStack, NoiseSchedule]:
    """Load a stack manifest and its level checkpoints."""
    from .checkpoint import load_checkpoint
    from .diffusion import make_cosine_schedule
    import hashlib

    path = Path(path)
    payload = json.loads(path.read_text())
    ref = payload["schedule_ref"]
    if ref.get("kind") != "cosine":
        raise DataValidationError(f"unknown schedule kind {ref.get('kind')!r}")
    sched = make_cosine_schedule(ref["T"], s=ref.get("s_offset", 0.008), beta_max=ref.get("beta_max", 0.999))

    denoisers: dict[str, Denoiser] = {}
    budgets: dict[str, int] = {}
    renoise = DEFAULT_RENOISE_ALPHA_BAR
    digest = hashlib.sha256()
    for entry in payload["levels"]:
        ckpt = path.parent / entry["checkpoint"]
        digest.update(ckpt.read_bytes())
        model = load_checkpoint(ckpt)
        if not isinstance(model, Denoiser):
            raise DataValidationError(f"{ckpt}: not a denoiser checkpoint")
        denoisers[entry["tag"]] = model
        budgets[entry["tag"]] = entry["budget"]
        renoise = entry["renoise_alpha_bar"]
    stack = SynthesizerStack(
        denoisers=denoisers,
        budgets=budgets,
        renoise_alpha_bar=renoise,
        stack_id=digest.hexdigest()[:16],
    )
    return stack, sched
