"""Noise schedule, forward process, reverse step, loss, and strided sampler."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch

from .errors import DataValidationError

DEFAULT_STEPS = 1000
DEFAULT_SAMPLE_BUDGET = 36


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays beta/alpha/alpha_bar for t = 1..T, with index 0 as the
    boundary convention alpha_bar[0] = 1."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    s_offset: float = 0.008
    beta_max: float = 0.999

    def __post_init__(self):
        if self.T < 2:
            raise DataValidationError(f"schedule needs T >= 2, got {self.T}")
        for name in ("beta", "alpha", "alpha_bar"):
            arr = getattr(self, name)
            if arr.shape != (self.T + 1,):
                raise DataValidationError(f"{name} must have length T + 1")
        b, a, ab = self.beta[1:], self.alpha[1:], self.alpha_bar[1:]
        if not ((b > 0).all() and (b <= self.beta_max).all()):
            raise DataValidationError("beta out of (0, beta_max]")
        if not np.allclose(a, 1.0 - b):
            raise DataValidationError("alpha != 1 - beta")
        if not ((ab > 0).all() and (ab < 1).all() and (np.diff(ab) < 0).all()):
            raise DataValidationError("alpha_bar must be strictly decreasing in (0, 1)")

    def ab(self, t: int) -> float:
        """alpha_bar at integer step t (t = 0 returns the boundary 1.0)."""
        if not 0 <= t <= self.T:
            raise DataValidationError(f"step {t} outside 0..{self.T}")
        return float(self.alpha_bar[t])

    def describe(self) -> dict:
        return {"kind": "cosine", "T": self.T, "s_offset": self.s_offset, "beta_max": self.beta_max}


def make_cosine_schedule(T: int = DEFAULT_STEPS, s: float = 0.008, beta_max: float = 0.999) -> NoiseSchedule:
    """Cosine alpha_bar ramp: f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
    alpha_bar = f(t)/f(0), beta clipped at ``beta_max`` and alpha_bar
    rebuilt from the clipped betas."""
    if T < 2:
        raise DataValidationError(f"T must be >= 2, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    ab_raw = f / f[0]
    beta = np.clip(1.0 - ab_raw[1:] / ab_raw[:-1], 0.0, beta_max)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(
        T=T,
        beta=np.concatenate(([0.0], beta)),
        alpha=np.concatenate(([1.0], alpha)),
        alpha_bar=np.concatenate(([1.0], alpha_bar)),
        s_offset=s,
        beta_max=beta_max,
    )


@dataclass(frozen=True)
class SamplerPlan:
    """Strictly decreasing timestep subsequence for one denoiser,
    optionally annotated with the per-level budget split it came from."""

    T: int
    steps: tuple[int, ...]
    level_budgets: Mapping[str, int] | None = None

    def __post_init__(self):
        if not self.steps:
            raise DataValidationError("sampler plan is empty")
        if any(not 1 <= s <= self.T for s in self.steps):
            raise DataValidationError(f"plan steps must lie in 1..{self.T}")
        if any(a <= b for a, b in zip(self.steps, self.steps[1:])):
            raise DataValidationError("plan steps must be strictly decreasing")

    @staticmethod
    def uniform(T: int, n_steps: int, t_start: int | None = None) -> "SamplerPlan":
        """Evenly strided steps from ``t_start`` (default T) down to 1."""
        t_start = T if t_start is None else t_start
        if not 1 <= t_start <= T:
            raise DataValidationError(f"t_start {t_start} outside 1..{T}")
        raw = np.linspace(t_start, 1, n_steps)
        steps: list[int] = []
        for v in raw:
            s = int(round(v))
            if not steps or s < steps[-1]:
                steps.append(s)
        return SamplerPlan(T=T, steps=tuple(steps))

    def to_json(self) -> str:
        payload = {"T": self.T, "stride_steps": list(self.steps)}
        if self.level_budgets is not None:
            payload["level_budgets"] = dict(self.level_budgets)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SamplerPlan":
        payload = json.loads(text)
        return cls(
            T=payload["T"],
            steps=tuple(payload["stride_steps"]),
            level_budgets=payload.get("level_budgets"),
        )


def _gather_ab(sched: NoiseSchedule, t, like: torch.Tensor) -> torch.Tensor:
    """alpha_bar as a tensor broadcastable against ``like``."""
    if isinstance(t, torch.Tensor):
        if t.ndim == 0:
            return _gather_ab(sched, int(t.item()), like)
        if (t < 0).any() or (t > sched.T).any():
            raise DataValidationError(f"steps outside 0..{sched.T}")
        ab = torch.from_numpy(sched.alpha_bar).to(like.dtype)[t.long()]
        return ab.reshape((-1,) + (1,) * (like.ndim - 1))
    return torch.tensor(sched.ab(int(t)), dtype=like.dtype)


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Forward process draw: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    if eps.shape != x0.shape:
        raise DataValidationError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    if isinstance(t, int) and not 1 <= t <= sched.T:
        raise DataValidationError(f"step {t} outside 1..{sched.T}")
    ab = _gather_ab(sched, t, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def _check_level(model, x: torch.Tensor) -> None:
    level_size = getattr(model, "level_size", None)
    if level_size is not None and tuple(x.shape[-2:]) != (level_size, level_size):
        raise DataValidationError(
            f"model expects {level_size}x{level_size} latents, got {tuple(x.shape[-2:])}"
        )


def denoise_loss(
    model: Callable,
    x0: torch.Tensor,
    s: torch.Tensor | None,
    sched: NoiseSchedule,
    generator: torch.Generator,
    prev: torch.Tensor | None = None,
) -> torch.Tensor:
    """Noise-prediction objective.

    Draws t uniform over 1..T and eps ~ N(0, I), perturbs x0 through the
    forward process, and returns the mean squared error between eps and the
    model's prediction given (x_t, t) and the fixed guidance.
    """
    _check_level(model, x0)
    if s is not None and s.shape[-2:] != x0.shape[-2:]:
        raise DataValidationError("guidance and latent spatial shapes differ")
    batch = x0.shape[0]
    t = torch.randint(1, sched.T + 1, (batch,), generator=generator)
    eps = torch.empty_like(x0).normal_(generator=generator)
    x_t = q_sample(x0, t, eps, sched)
    pred = model(x_t, t, s, prev)
    return torch.mean((pred - eps) ** 2)


def p_step(
    model: Callable,
    x_t: torch.Tensor,
    t: int,
    t_prev: int,
    s: torch.Tensor | None,
    sched: NoiseSchedule,
    generator: torch.Generator,
    prev: torch.Tensor | None = None,
    x0_clamp: float = 1.5,
) -> torch.Tensor:
    """One strided ancestral reverse step from t to t_prev.

    Reconstructs x0_hat from the predicted noise, clamps it, and samples
    the posterior for the strided transition; the final step to t_prev = 0
    is deterministic.
    """
    if not (sched.T >= t > t_prev >= 0):
        raise DataValidationError(f"invalid step order t={t}, t_prev={t_prev}")
    t_vec = torch.full((x_t.shape[0],), t, dtype=torch.long)
    eps_hat = model(x_t, t_vec, s, prev)
    ab_t = sched.ab(t)
    ab_p = sched.ab(t_prev)
    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    x0_hat = x0_hat.clamp(-x0_clamp, x0_clamp)

    alpha_strided = ab_t / ab_p
    denom = 1.0 - ab_t
    mean = (
        np.sqrt(ab_p) * (1.0 - alpha_strided) / denom * x0_hat
        + np.sqrt(alpha_strided) * (1.0 - ab_p) / denom * x_t
    )
    if t_prev == 0:
        return mean
    var = (1.0 - ab_p) / denom * (1.0 - alpha_strided)
    z = torch.empty_like(x_t).normal_(generator=generator)
    return mean + np.sqrt(var) * z


def sample(
    model: Callable,
    s: torch.Tensor | None,
    sched: NoiseSchedule,
    plan: SamplerPlan,
    seed: int,
    prev: torch.Tensor | None = None,
    x_init: torch.Tensor | None = None,
    shape: tuple[int, ...] | None = None,
    x0_clamp: float = 1.5,
) -> torch.Tensor:
    """Run the reverse chain along ``plan``; guidance is held fixed at
    every step. Starts from seeded N(0, I) unless ``x_init`` is given."""
    if plan.T != sched.T:
        raise DataValidationError(f"plan T={plan.T} does not match schedule T={sched.T}")
    generator = torch.Generator().manual_seed(seed)
    if x_init is None:
        if shape is None:
            if s is None:
                raise DataValidationError("need s, x_init, or an explicit shape")
            shape = tuple(s.shape)
        x = torch.empty(shape).normal_(generator=generator)
    else:
        x = x_init
    steps = plan.steps
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        x = p_step(model, x, t, t_prev, s, sched, generator, prev=prev, x0_clamp=x0_clamp)
    return x
