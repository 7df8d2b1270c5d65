import numpy as np
import pytest
import torch
import torch.nn.functional as F

from terradiff.cascade import (
    SynthesizerStack,
    cascade_generate,
    latent_pyramid,
    level_latent,
    load_stack,
    renoise_timestep,
    save_stack_manifest,
    single_level_generate,
)
from terradiff.checkpoint import save_checkpoint
from terradiff.diffusion import make_cosine_schedule
from terradiff.errors import DataValidationError
from terradiff.models.denoiser import Denoiser, DenoiserConfig
from terradiff.models.guidance import GuidanceLatents, guidance_pyramid


@pytest.fixture(scope="module")
def sched():
    return make_cosine_schedule(1000)


def _tiny_stack():
    torch.manual_seed(0)
    denoisers = {
        level: Denoiser(
            DenoiserConfig(
                level=level,
                base_width=8,
                time_dim=16,
                prev_conditioning=level != "structural",
            )
        ).eval()
        for level in ("structural", "intermediate", "fine")
    }
    return SynthesizerStack(denoisers=denoisers)


def _guidance():
    g = torch.Generator().manual_seed(1)
    return guidance_pyramid(torch.empty(1, 4, 36, 36).normal_(generator=g))


class TestLevelLatent:
    def test_constant_latent_constant_everywhere(self):
        x = torch.full((1, 4, 36, 36), 0.7)
        for level in ("structural", "intermediate", "fine"):
            assert torch.allclose(level_latent(x, level), torch.full((1,), 0.7))

    def test_structural_is_double_pool(self):
        x = torch.randn(2, 4, 36, 36)
        twice = F.avg_pool2d(F.avg_pool2d(x, 2), 2)
        assert torch.allclose(level_latent(x, "structural"), twice, atol=1e-6)

    def test_energy_non_increasing(self):
        x = torch.randn(1, 4, 36, 36)
        fine = float((level_latent(x, "fine") ** 2).mean())
        inter = float((level_latent(x, "intermediate") ** 2).mean())
        structural = float((level_latent(x, "structural") ** 2).mean())
        assert structural <= inter <= fine

    def test_pyramid_shapes(self):
        pyr = latent_pyramid(torch.zeros(1, 4, 36, 36))
        assert tuple(pyr["structural"].shape) == (1, 4, 9, 9)
        assert tuple(pyr["intermediate"].shape) == (1, 4, 18, 18)
        assert tuple(pyr["fine"].shape) == (1, 4, 36, 36)


def test_renoise_timestep_midpoint(sched):
    t_mid = renoise_timestep(sched, 0.5)
    assert abs(sched.ab(t_mid) - 0.5) < 0.01


class TestStack:
    def test_requires_all_levels(self):
        stack = _tiny_stack()
        with pytest.raises(DataValidationError):
            SynthesizerStack(denoisers={"fine": stack.denoisers["fine"]})

    def test_level_key_must_match(self):
        stack = _tiny_stack()
        bad = dict(stack.denoisers)
        bad["structural"], bad["fine"] = bad["fine"], bad["structural"]
        with pytest.raises(DataValidationError):
            SynthesizerStack(denoisers=bad)

    def test_default_budget_total(self):
        assert _tiny_stack().total_steps == 36

    def test_weights_pairwise_distinct(self):
        import hashlib

        stack = _tiny_stack()
        digests = set()
        for level, model in stack.denoisers.items():
            h = hashlib.sha256()
            for v in model.state_dict().values():
                h.update(v.numpy().tobytes())
            digests.add(h.hexdigest())
        assert len(digests) == 3


class CountingWrapper:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.guidance_seen = []

    @property
    def level(self):
        return self.inner.level

    @property
    def level_size(self):
        return self.inner.level_size

    def __call__(self, x_t, t, s=None, prev=None):
        self.calls += 1
        self.guidance_seen.append(s)
        return self.inner(x_t, t, s, prev)


class TestCascadeGenerate:
    def test_exact_invocation_budget(self, sched):
        stack = _tiny_stack()
        wrapped = {lv: CountingWrapper(m) for lv, m in stack.denoisers.items()}
        counting = SynthesizerStack.__new__(SynthesizerStack)
        counting.denoisers = wrapped
        counting.budgets = dict(stack.budgets)
        counting.renoise_alpha_bar = stack.renoise_alpha_bar
        counting.stack_id = ""
        with torch.no_grad():
            out = cascade_generate(counting, _guidance(), sched, seed=5)
        assert tuple(out.shape) == (1, 4, 36, 36)
        assert wrapped["structural"].calls == 16
        assert wrapped["intermediate"].calls == 10
        assert wrapped["fine"].calls == 10
        assert sum(w.calls for w in wrapped.values()) == 36

    def test_guidance_constant_within_level(self, sched):
        stack = _tiny_stack()
        wrapped = {lv: CountingWrapper(m) for lv, m in stack.denoisers.items()}
        counting = SynthesizerStack.__new__(SynthesizerStack)
        counting.denoisers = wrapped
        counting.budgets = dict(stack.budgets)
        counting.renoise_alpha_bar = stack.renoise_alpha_bar
        counting.stack_id = ""
        with torch.no_grad():
            cascade_generate(counting, _guidance(), sched, seed=5)
        for level in ("structural", "intermediate", "fine"):
            seen = wrapped[level].guidance_seen
            assert all(torch.equal(seen[0], s) for s in seen[1:])

    def test_deterministic(self, sched):
        stack = _tiny_stack()
        with torch.no_grad():
            a = cascade_generate(stack, _guidance(), sched, seed=11)
            b = cascade_generate(stack, _guidance(), sched, seed=11)
            c = cascade_generate(stack, _guidance(), sched, seed=12)
        assert torch.equal(a, b)
        assert not torch.equal(a, c)


class TestSingleLevel:
    def test_budget_and_determinism(self, sched):
        torch.manual_seed(2)
        model = Denoiser(DenoiserConfig(level="fine", base_width=8, time_dim=16)).eval()
        counter = CountingWrapper(model)
        with torch.no_grad():
            a = single_level_generate(counter, _guidance(), sched, seed=3)
        assert counter.calls == 36
        with torch.no_grad():
            b = single_level_generate(counter, _guidance(), sched, seed=3)
        assert torch.equal(a, b)


def test_stack_manifest_round_trip(tmp_path, sched):
    stack = _tiny_stack()
    checkpoints = {}
    for level, model in stack.denoisers.items():
        path = save_checkpoint(model, tmp_path / f"denoiser_{level}.tdnc")
        checkpoints[level] = path.name
    save_stack_manifest(tmp_path / "stack.json", stack, sched, checkpoints)
    loaded, loaded_sched = load_stack(tmp_path / "stack.json")
    assert loaded.budgets == stack.budgets
    assert loaded.renoise_alpha_bar == stack.renoise_alpha_bar
    assert loaded.stack_id
    assert loaded_sched.T == sched.T
    for level, model in stack.denoisers.items():
        for key, tensor in model.state_dict().items():
            assert torch.equal(loaded.denoisers[level].state_dict()[key], tensor)
