import numpy as np
import pytest

from duetgen import (
    DiffusionState,
    ddim_step,
    ddim_subsequence,
    forward_noise,
    make_schedule,
    posterior_step,
    sample,
)
from duetgen.diffusion import posterior_mean_variance

from conftest import ZeroNoise


class TestMakeSchedule:
    def test_paper_configuration_has_1000_steps(self):
        schedule = make_schedule(1000, 1e-4, 2e-2)
        assert schedule.T == 1000
        assert schedule.beta.shape == (1000,)

    def test_alpha_bar_1_is_one_minus_beta_min(self):
        schedule = make_schedule(1000, 1e-4, 2e-2)
        assert np.isclose(schedule.alpha_bar_at(1), 1.0 - 1e-4)

    def test_alpha_bar_final_matches_product_oracle(self):
        schedule = make_schedule(1000, 1e-4, 2e-2)
        product = 1.0
        for beta in np.linspace(1e-4, 2e-2, 1000):
            product *= 1.0 - beta
        assert np.isclose(schedule.alpha_bar_at(1000), product, rtol=1e-12)
        assert schedule.alpha_bar_at(1000) < 1e-4

    def test_alpha_bar_strictly_decreasing(self):
        schedule = make_schedule(50, 5e-3, 5e-2)
        assert np.all(np.diff(schedule.alpha_bar) < 0)

    def test_alpha_bar_zero_is_one(self):
        assert make_schedule(10).alpha_bar_at(0) == 1.0

    def test_parameter_bounds(self):
        with pytest.raises(ValueError):
            make_schedule(1)
        with pytest.raises(ValueError):
            make_schedule(10, 0.0, 0.5)
        with pytest.raises(ValueError):
            make_schedule(10, 0.5, 0.1)
        with pytest.raises(ValueError):
            make_schedule(10, 0.5, 1.0)


class TestForwardNoise:
    def test_zero_noise_draw(self, schedule):
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal((2, 4, 3, 3))
        t = 400
        out = forward_noise(x0, t, schedule, ZeroNoise())
        assert np.array_equal(out, np.sqrt(schedule.alpha_bar_at(t)) * x0)

    def test_near_identity_at_low_t(self, schedule):
        rng = np.random.default_rng(1)
        x0 = rng.standard_normal((2, 4, 3, 3))
        out = forward_noise(x0, 1, schedule, rng)
        bound = np.sqrt(1.0 - schedule.alpha_bar_at(1)) * 5.0
        assert np.all(np.abs(out - np.sqrt(schedule.alpha_bar_at(1)) * x0) < bound)

    def test_monte_carlo_moments(self, schedule):
        rng = np.random.default_rng(2)
        x0 = np.full((4,), 1.5)
        t = 600
        draws = np.stack([forward_noise(x0, t, schedule, rng) for _ in range(10_000)])
        ab = schedule.alpha_bar_at(t)
        se_mean = np.sqrt(1.0 - ab) / np.sqrt(10_000)
        assert np.all(np.abs(draws.mean(axis=0) - np.sqrt(ab) * x0) < 3 * se_mean)
        var = draws.var(axis=0)
        se_var = (1.0 - ab) * np.sqrt(2.0 / 10_000)
        assert np.all(np.abs(var - (1.0 - ab)) < 3 * se_var)

    def test_out_of_range(self, schedule):
        with pytest.raises(ValueError, match="outside"):
            forward_noise(np.zeros(3), 0, schedule, ZeroNoise())
        with pytest.raises(ValueError, match="outside"):
            forward_noise(np.zeros(3), 1001, schedule, ZeroNoise())


class TestPosteriorStep:
    def test_terminal_step_returns_x0(self, schedule):
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal((5,))
        x1 = rng.standard_normal((5,))
        out = posterior_step(x0, x1, 1, schedule, rng)
        assert np.allclose(out, x0)
        _, variance = posterior_mean_variance(x0, x1, 1, schedule)
        assert variance == 0.0

    def test_zero_noise_draw_matches_mean_formula(self, schedule):
        rng = np.random.default_rng(4)
        x0 = rng.standard_normal((6,))
        xt = rng.standard_normal((6,))
        t = 350
        out = posterior_step(x0, xt, t, schedule, ZeroNoise())
        # independent re-derivation of the posterior mean
        ab_t = schedule.alpha_bar_at(t)
        ab_prev = schedule.alpha_bar_at(t - 1)
        beta_t = schedule.beta_at(t)
        alpha_t = 1.0 - beta_t
        mean = (
            np.sqrt(ab_prev) * beta_t / (1 - ab_t) * x0
            + np.sqrt(alpha_t) * (1 - ab_prev) / (1 - ab_t) * xt
        )
        assert np.allclose(out, mean, atol=1e-14)

    def test_monte_carlo_variance(self, schedule):
        rng = np.random.default_rng(5)
        x0 = np.zeros(4)
        xt = np.zeros(4)
        t = 500
        draws = np.stack(
            [posterior_step(x0, xt, t, schedule, rng) for _ in range(10_000)]
        )
        beta_tilde = (
            (1 - schedule.alpha_bar_at(t - 1))
            / (1 - schedule.alpha_bar_at(t))
            * schedule.beta_at(t)
        )
        se = beta_tilde * np.sqrt(2.0 / 10_000)
        assert np.all(np.abs(draws.var(axis=0) - beta_tilde) < 3 * se)

    def test_matches_ddim_at_terminal_step(self, schedule):
        # both steppers collapse to x0_pred when stepping 1 -> 0
        rng = np.random.default_rng(6)
        x0 = rng.standard_normal((4,))
        x1 = rng.standard_normal((4,))
        assert np.allclose(
            posterior_step(x0, x1, 1, schedule, ZeroNoise()),
            ddim_step(x0, x1, 1, 0, schedule),
        )


class TestDdimStep:
    def test_deterministic(self, schedule):
        rng = np.random.default_rng(7)
        x0 = rng.standard_normal((3, 3))
        xt = rng.standard_normal((3, 3))
        a = ddim_step(x0, xt, 700, 680, schedule)
        b = ddim_step(x0, xt, 700, 680, schedule)
        assert np.array_equal(a, b)

    def test_zero_residual_case(self, schedule):
        rng = np.random.default_rng(8)
        x0 = rng.standard_normal((5,))
        t, t_prev = 640, 600
        xt = np.sqrt(schedule.alpha_bar_at(t)) * x0
        out = ddim_step(x0, xt, t, t_prev, schedule)
        assert np.allclose(out, np.sqrt(schedule.alpha_bar_at(t_prev)) * x0)

    def test_step_order_violation(self, schedule):
        with pytest.raises(ValueError, match="t_prev"):
            ddim_step(np.zeros(2), np.zeros(2), 500, 500, schedule)
        with pytest.raises(ValueError, match="t_prev"):
            ddim_step(np.zeros(2), np.zeros(2), 500, 600, schedule)

    def test_perfect_denoiser_recovers_x0(self, schedule):
        # compose the 50-step subsequence with a denoiser that always
        # returns the true x0; the chain must land on x0 at t=0
        rng = np.random.default_rng(9)
        x0 = rng.standard_normal((2, 6, 2, 3))
        steps = ddim_subsequence(schedule.T, 50)
        x = forward_noise(x0, schedule.T, schedule, rng)
        for t, t_prev in zip(steps[:-1], steps[1:]):
            x = ddim_step(x0, x, t, t_prev, schedule)
        assert np.allclose(x, x0, atol=1e-6)


class _PerfectDenoiser:
    def __init__(self, x0):
        self.x0 = x0
        self.motion_shape = x0.shape

    def predict_x0(self, state, condition):
        return self.x0.copy()


class _RecordingHook:
    def __init__(self):
        self.pre_steps = []
        self.post_steps = []

    def pre_step(self, x, t):
        self.pre_steps.append(t)
        return x

    def post_predict(self, x, t):
        self.post_steps.append(t)
        return x


class TestSample:
    def test_subsequence_helper(self):
        steps = ddim_subsequence(1000, 50)
        assert steps[0] == 1000 and steps[-1] == 0
        assert len(steps) == 51
        assert all(a > b for a, b in zip(steps, steps[1:]))

    def test_deterministic_given_seed(self, schedule):
        x0 = np.random.default_rng(10).standard_normal((2, 5, 2, 3))
        denoiser = _PerfectDenoiser(x0)
        a = sample(denoiser, None, schedule, rng=np.random.default_rng(42))
        b = sample(denoiser, None, schedule, rng=np.random.default_rng(42))
        assert np.array_equal(a.as_tensor(), b.as_tensor())

    def test_identity_hooks_do_not_change_output(self, schedule):
        x0 = np.random.default_rng(11).standard_normal((2, 5, 2, 3))
        denoiser = _PerfectDenoiser(x0)
        bare = sample(denoiser, None, schedule, rng=np.random.default_rng(0))
        hook = _RecordingHook()
        hooked = sample(denoiser, None, schedule, hooks=[hook], rng=np.random.default_rng(0))
        assert np.array_equal(bare.as_tensor(), hooked.as_tensor())
        assert hook.pre_steps == hook.post_steps
        assert len(hook.pre_steps) == 50

    def test_posterior_sampler_requires_consecutive_steps(self, short_schedule):
        x0 = np.zeros((2, 3, 2, 3))
        denoiser = _PerfectDenoiser(x0)
        with pytest.raises(ValueError, match="consecutive"):
            sample(
                denoiser, None, short_schedule,
                step_subsequence=[20, 10, 0], rng=np.random.default_rng(0),
                sampler="posterior",
            )
        motion = sample(
            denoiser, None, short_schedule,
            step_subsequence=list(range(20, -1, -1)),
            rng=np.random.default_rng(0), sampler="posterior",
        )
        assert motion.as_tensor().shape == (2, 3, 2, 3)

    def test_bad_hook_shape_rejected(self, short_schedule):
        x0 = np.zeros((2, 3, 2, 3))
        denoiser = _PerfectDenoiser(x0)

        class BadHook:
            def pre_step(self, x, t):
                return x[:, :2]

        with pytest.raises(ValueError, match="pre_step shape"):
            sample(denoiser, None, short_schedule, hooks=[BadHook()],
                   rng=np.random.default_rng(0))

    def test_subsequence_validation(self, short_schedule):
        denoiser = _PerfectDenoiser(np.zeros((2, 3, 2, 3)))
        with pytest.raises(ValueError, match="end at 0"):
            sample(denoiser, None, short_schedule, step_subsequence=[20, 10],
                   rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="descending"):
            sample(denoiser, None, short_schedule, step_subsequence=[10, 20, 0],
                   rng=np.random.default_rng(0))


class TestDiffusionState:
    def test_shape_validation(self):
        with pytest.raises(ValueError, match="2, L, J, 3"):
            DiffusionState(np.zeros((3, 4, 2, 3)), 1)

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            DiffusionState(np.zeros((2, 4, 2, 3)), -1)
