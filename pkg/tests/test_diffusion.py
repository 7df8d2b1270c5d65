import numpy as np
import pytest
import torch

from terradiff.diffusion import (
    NoiseSchedule,
    SamplerPlan,
    denoise_loss,
    make_cosine_schedule,
    p_step,
    q_sample,
    sample,
)
from terradiff.errors import DataValidationError


@pytest.fixture(scope="module")
def sched():
    return make_cosine_schedule(1000)


class TestCosineSchedule:
    @pytest.mark.parametrize("T", [10, 100, 1000])
    def test_invariants(self, T):
        s = make_cosine_schedule(T)
        ab = s.alpha_bar
        assert ab[0] == 1.0
        assert ab[1] < 1.0
        assert (np.diff(ab[1:]) < 0).all()
        assert ((ab[1:] > 0) & (ab[1:] < 1)).all()
        assert ((s.beta[1:] > 0) & (s.beta[1:] <= 0.999)).all()
        assert np.allclose(s.alpha[1:], 1 - s.beta[1:])

    def test_final_alpha_bar_tiny(self):
        s = make_cosine_schedule(1000)
        assert s.alpha_bar[-1] <= 1e-5

    def test_last_beta_clipped(self):
        s = make_cosine_schedule(1000)
        assert s.beta[-1] == 0.999

    def test_matches_reference_construction(self):
        # recompute alpha_bar directly from the f(t)/f(0) recurrence
        T, off = 50, 0.008
        t = np.arange(T + 1)
        f = np.cos(((t / T + off) / (1 + off)) * np.pi / 2) ** 2
        expected = f / f[0]
        s = make_cosine_schedule(T)
        unclipped = s.beta[1:] < 0.999
        assert np.allclose(s.alpha_bar[1:][unclipped], expected[1:][unclipped], rtol=1e-10)

    def test_too_small_T(self):
        with pytest.raises(DataValidationError):
            make_cosine_schedule(1)


class TestQSample:
    def test_zero_noise(self, sched):
        x0 = torch.randn(2, 4, 8, 8)
        out = q_sample(x0, 250, torch.zeros_like(x0), sched)
        assert torch.allclose(out, np.sqrt(sched.ab(250)) * x0)

    def test_zero_signal(self, sched):
        eps = torch.randn(2, 4, 8, 8)
        out = q_sample(torch.zeros_like(eps), 250, eps, sched)
        assert torch.allclose(out, np.sqrt(1 - sched.ab(250)) * eps)

    @pytest.mark.parametrize("t", [1, 500, 1000])
    def test_linear_in_signal_and_noise(self, sched, t):
        g = torch.Generator().manual_seed(3)
        x0 = torch.empty(1, 4, 6, 6).normal_(generator=g)
        eps = torch.empty(1, 4, 6, 6).normal_(generator=g)
        combined = q_sample(x0, t, eps, sched)
        parts = q_sample(x0, t, torch.zeros_like(eps), sched) + q_sample(
            torch.zeros_like(x0), t, eps, sched
        )
        assert torch.equal(combined, parts)

    def test_batched_t(self, sched):
        x0 = torch.ones(3, 1, 2, 2)
        t = torch.tensor([1, 500, 1000])
        out = q_sample(x0, t, torch.zeros_like(x0), sched)
        for i, ti in enumerate([1, 500, 1000]):
            assert out[i].allclose(torch.full((1, 2, 2), float(np.sqrt(sched.ab(ti)))))

    def test_t_out_of_range(self, sched):
        x0 = torch.zeros(1, 1, 2, 2)
        with pytest.raises(DataValidationError):
            q_sample(x0, 0, torch.zeros_like(x0), sched)
        with pytest.raises(DataValidationError):
            q_sample(x0, 1001, torch.zeros_like(x0), sched)

    def test_moments_monte_carlo(self, sched):
        g = torch.Generator().manual_seed(11)
        x0 = torch.empty(1, 1, 4, 4).uniform_(-1, 1, generator=g)
        t = 400
        draws = 10_000
        eps = torch.empty((draws,) + tuple(x0.shape[1:])).normal_(generator=g)
        xt = q_sample(x0.expand(draws, -1, -1, -1), t, eps, sched)
        ab = sched.ab(t)
        mean_err = (xt.mean(0) - np.sqrt(ab) * x0[0]).abs().max()
        assert float(mean_err) < 0.02 * float(x0.max() - x0.min())
        pooled_var = float(((xt - np.sqrt(ab) * x0) ** 2).mean())
        assert abs(pooled_var - (1 - ab)) < 0.02 * (1 - ab)


class _OracleModel:
    """Predicts the exact noise implied by a fixed clean latent."""

    def __init__(self, x0, sched):
        self.x0 = x0
        self.sched = sched
        self.calls = 0

    def __call__(self, x_t, t, s=None, prev=None):
        self.calls += 1
        ti = int(t[0]) if isinstance(t, torch.Tensor) else int(t)
        ab = self.sched.ab(ti)
        return (x_t - np.sqrt(ab) * self.x0) / np.sqrt(1 - ab)


class TestPStep:
    def test_exact_noise_inverts_forward(self, sched):
        g = torch.Generator().manual_seed(5)
        x0 = torch.empty(1, 4, 6, 6).uniform_(-1, 1, generator=g)
        eps = torch.empty_like(x0).normal_(generator=g)
        t = 700
        x_t = q_sample(x0, t, eps, sched)
        model = lambda xt, tt, s, prev: eps
        out = p_step(model, x_t, t, 0, None, sched, torch.Generator().manual_seed(0))
        assert float((out - x0).abs().max()) < 1e-5

    def test_final_step_is_deterministic(self, sched):
        x_t = torch.randn(1, 4, 6, 6)
        model = lambda xt, tt, s, prev: torch.zeros_like(xt)
        a = p_step(model, x_t, 500, 0, None, sched, torch.Generator().manual_seed(1))
        b = p_step(model, x_t, 500, 0, None, sched, torch.Generator().manual_seed(2))
        assert torch.equal(a, b)

    def test_seeded_reproducibility(self, sched):
        x_t = torch.randn(1, 4, 6, 6)
        model = lambda xt, tt, s, prev: torch.zeros_like(xt)
        a = p_step(model, x_t, 500, 250, None, sched, torch.Generator().manual_seed(7))
        b = p_step(model, x_t, 500, 250, None, sched, torch.Generator().manual_seed(7))
        assert torch.equal(a, b)

    def test_step_order_enforced(self, sched):
        x_t = torch.randn(1, 4, 6, 6)
        model = lambda xt, tt, s, prev: torch.zeros_like(xt)
        with pytest.raises(DataValidationError):
            p_step(model, x_t, 100, 100, None, sched, torch.Generator())

    def test_x0_clamp_applied(self, sched):
        x_t = torch.full((1, 1, 2, 2), 50.0)
        model = lambda xt, tt, s, prev: torch.zeros_like(xt)
        out = p_step(model, x_t, 1000, 0, None, sched, torch.Generator())
        assert float(out.abs().max()) <= 1.5


class TestSamplerPlan:
    def test_uniform_full_range(self):
        plan = SamplerPlan.uniform(1000, 36)
        assert len(plan.steps) == 36
        assert plan.steps[0] == 1000 and plan.steps[-1] == 1
        assert all(a > b for a, b in zip(plan.steps, plan.steps[1:]))

    def test_uniform_from_midpoint(self):
        plan = SamplerPlan.uniform(1000, 10, t_start=500)
        assert plan.steps[0] == 500 and len(plan.steps) == 10

    def test_json_round_trip(self):
        plan = SamplerPlan(1000, (1000, 500, 1), level_budgets={"fine": 3})
        back = SamplerPlan.from_json(plan.to_json())
        assert back == plan

    def test_validation(self):
        with pytest.raises(DataValidationError):
            SamplerPlan(1000, ())
        with pytest.raises(DataValidationError):
            SamplerPlan(1000, (10, 10))
        with pytest.raises(DataValidationError):
            SamplerPlan(1000, (2000, 1))


class TestSample:
    def test_deterministic(self, sched):
        model = lambda xt, tt, s, prev: torch.zeros_like(xt)
        s = torch.zeros(1, 4, 9, 9)
        plan = SamplerPlan.uniform(1000, 8)
        a = sample(model, s, sched, plan, seed=42)
        b = sample(model, s, sched, plan, seed=42)
        assert torch.equal(a, b)

    def test_plan_length_counts_model_calls(self, sched):
        x0 = torch.zeros(1, 4, 6, 6)
        model = _OracleModel(x0, sched)
        plan = SamplerPlan.uniform(1000, 36)
        sample(model, torch.zeros_like(x0), sched, plan, seed=0)
        assert model.calls == 36

    def test_oracle_model_recovers_x0(self, sched):
        g = torch.Generator().manual_seed(9)
        x0 = torch.empty(1, 4, 6, 6).uniform_(-0.9, 0.9, generator=g)
        model = _OracleModel(x0, sched)
        plan = SamplerPlan.uniform(1000, 36)
        out = sample(model, torch.zeros_like(x0), sched, plan, seed=3)
        assert float((out - x0).abs().max()) < 1e-3

    def test_mismatched_T_rejected(self, sched):
        model = lambda xt, tt, s, prev: torch.zeros_like(xt)
        plan = SamplerPlan.uniform(500, 4)
        with pytest.raises(DataValidationError):
            sample(model, torch.zeros(1, 4, 6, 6), sched, plan, seed=0)


class TestDenoiseLoss:
    def test_perfect_predictor_zero_loss(self, sched):
        ab = torch.from_numpy(sched.alpha_bar)

        def stub(x_t, t, s, prev):
            scale = torch.sqrt(1.0 - ab[t.long()]).reshape(-1, 1, 1, 1).float()
            return x_t / scale

        x0 = torch.zeros(8, 4, 6, 6)
        loss = denoise_loss(stub, x0, None, sched, torch.Generator().manual_seed(0))
        assert float(loss) < 1e-10

    def test_zero_predictor_unit_loss(self, sched):
        stub = lambda x_t, t, s, prev: torch.zeros_like(x_t)
        x0 = torch.zeros(10_000, 1, 4, 4)
        loss = denoise_loss(stub, x0, None, sched, torch.Generator().manual_seed(1))
        assert abs(float(loss) - 1.0) < 0.05

    def test_level_mismatch_rejected(self, sched):
        class Stub:
            level_size = 36

            def __call__(self, x_t, t, s, prev):
                return torch.zeros_like(x_t)

        with pytest.raises(DataValidationError):
            denoise_loss(Stub(), torch.zeros(1, 4, 18, 18), None, sched, torch.Generator())

    def test_guidance_shape_checked(self, sched):
        stub = lambda x_t, t, s, prev: torch.zeros_like(x_t)
        with pytest.raises(DataValidationError):
            denoise_loss(
                stub, torch.zeros(1, 4, 8, 8), torch.zeros(1, 4, 4, 4), sched, torch.Generator()
            )
