import numpy as np
import pytest

from duetgen import (
    AnalyticGaussianPrior,
    ConditionLabel,
    DiffusionState,
    MlpTrainConfig,
    MotionSequence,
    TwoAgentMotion,
    analytic_predict_x0,
    load_denoiser,
    make_schedule,
    save_denoiser,
    train_mlp_denoiser,
)
from duetgen.denoisers import TrainingDiverged, squared_exponential_kernel


def smooth_mean(L, J, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((2, 1, J, 3)) * 0.5
    drift = np.linspace(0.0, 1.0, L)[None, :, None, None]
    return base + 0.3 * drift


def dense_predict_oracle(prior, x_t, t, schedule):
    """Brute-force posterior mean: build the full dense covariance over all
    2*L*J*3 coordinates and solve the linear system directly."""
    shape = prior.motion_shape
    _, L, J, _ = shape
    dim = int(np.prod(shape))
    kernel = prior.kernel_matrix()
    sigma = np.zeros((dim, dim))
    for a in range(2):
        for j in range(J):
            for k in range(3):
                idx = [((a * L + f) * J + j) * 3 + k for f in range(L)]
                sigma[np.ix_(idx, idx)] = kernel
    ab = schedule.alpha_bar_at(t)
    m = prior.mean.ravel()
    dev = x_t.ravel() - np.sqrt(ab) * m
    system = ab * sigma + (1.0 - ab) * np.eye(dim)
    out = m + np.sqrt(ab) * sigma @ np.linalg.solve(system, dev)
    return out.reshape(shape)


class TestAnalyticPrior:
    def test_no_noise_limit_returns_x_t(self, schedule):
        prior = AnalyticGaussianPrior(smooth_mean(6, 2), schedule)
        x_t = np.random.default_rng(1).standard_normal((2, 6, 2, 3))
        out = analytic_predict_x0(prior, x_t, 0, schedule)
        assert np.array_equal(out, x_t)

    def test_pure_noise_limit_returns_mean(self, schedule):
        mean = smooth_mean(6, 2)
        prior = AnalyticGaussianPrior(mean, schedule)
        x_t = np.random.default_rng(2).standard_normal((2, 6, 2, 3))
        out = analytic_predict_x0(prior, x_t, schedule.T, schedule)
        # alpha_bar_T ~ 4e-5, so the posterior collapses onto the mean
        assert np.allclose(out, mean, atol=0.05)

    def test_diagonal_kernel_reduces_to_scalar_shrinkage(self, schedule):
        # a very short length scale makes the kernel effectively diagonal
        variance = 0.4
        mean = smooth_mean(5, 2, seed=3)
        prior = AnalyticGaussianPrior(
            mean, schedule, length_scale=1e-3, variance=variance
        )
        x_t = np.random.default_rng(4).standard_normal((2, 5, 2, 3))
        t = 420
        ab = schedule.alpha_bar_at(t)
        var = prior.marginal_variance()
        expected = mean + (
            np.sqrt(ab) * var / (ab * var + 1.0 - ab)
        ) * (x_t - np.sqrt(ab) * mean)
        out = analytic_predict_x0(prior, x_t, t, schedule)
        assert np.allclose(out, expected, atol=1e-10)

    @pytest.mark.parametrize("t", [1, 250, 700, 1000])
    def test_matches_dense_solve_oracle(self, schedule, t):
        prior = AnalyticGaussianPrior(
            smooth_mean(8, 2, seed=5), schedule, length_scale=3.0, variance=0.5
        )
        x_t = np.random.default_rng(t).standard_normal((2, 8, 2, 3))
        fast = analytic_predict_x0(prior, x_t, t, schedule)
        dense = dense_predict_oracle(prior, x_t, t, schedule)
        assert np.allclose(fast, dense, atol=1e-8)

    def test_predict_x0_protocol(self, schedule):
        prior = AnalyticGaussianPrior(smooth_mean(4, 2), schedule)
        x_t = np.random.default_rng(6).standard_normal((2, 4, 2, 3))
        via_state = prior.predict_x0(DiffusionState(x_t, 300), None)
        direct = analytic_predict_x0(prior, x_t, 300, schedule)
        assert np.array_equal(via_state, direct)

    def test_shape_mismatch_rejected(self, schedule):
        prior = AnalyticGaussianPrior(smooth_mean(4, 2), schedule)
        with pytest.raises(ValueError, match="shape"):
            analytic_predict_x0(prior, np.zeros((2, 5, 2, 3)), 10, schedule)

    def test_kernel_positive_definite(self):
        kernel = squared_exponential_kernel(50, 10.0, 0.25)
        eigvals = np.linalg.eigvalsh(kernel + 1e-8 * np.eye(50))
        assert np.all(eigvals > 0)


def constant_dataset(value=0.8, L=6, J=3):
    frames = np.full((L, J, 3), value)
    frames[:, :, 1] += 0.1  # break exact symmetry between coordinates
    motion = TwoAgentMotion(MotionSequence(frames), MotionSequence(frames + 0.2))
    return [(motion, ConditionLabel("circle-duet"))]


class TestMlpDenoiser:
    def test_memorizes_constant_motion(self):
        schedule = make_schedule(100)
        dataset = constant_dataset()
        config = MlpTrainConfig(hidden_width=48, hidden_layers=2, epochs=600,
                                batch_size=1, learning_rate=1e-3)
        model = train_mlp_denoiser(dataset, schedule, config, np.random.default_rng(0))
        x0 = dataset[0][0].as_tensor()
        rng = np.random.default_rng(1)
        t = schedule.T  # pure-noise input: the model must recall the motion
        from duetgen import forward_noise

        x_t = forward_noise(x0, t, schedule, rng)
        pred = model.predict_x0(DiffusionState(x_t, t), dataset[0][1])
        rel = np.linalg.norm(pred - x0) / np.linalg.norm(x0)
        assert rel < 0.10

    def test_loss_decreases(self):
        schedule = make_schedule(100)
        rng = np.random.default_rng(2)
        dataset = []
        for _ in range(6):
            frames = rng.standard_normal((5, 2, 3)) * 0.5
            motion = TwoAgentMotion(MotionSequence(frames), MotionSequence(frames + 0.3))
            dataset.append((motion, ConditionLabel("orbit")))
        config = MlpTrainConfig(hidden_width=32, hidden_layers=2, epochs=60, batch_size=3)
        model = train_mlp_denoiser(dataset, schedule, config, np.random.default_rng(3))
        assert model.loss_history[-1] < model.loss_history[0]
        assert len(model.loss_history) == 60

    def test_gradients_match_finite_differences(self):
        schedule = make_schedule(50)
        config = MlpTrainConfig(hidden_width=12, hidden_layers=2, time_embed_dim=8)
        rng = np.random.default_rng(4)
        from duetgen.denoisers import MlpDenoiser

        model = MlpDenoiser((2, 4, 2, 3), schedule, 4, config, rng)
        inputs = rng.standard_normal((3, model.layer_sizes[0]))
        targets = rng.standard_normal((3, model.layer_sizes[-1]))
        _, grads_w, grads_b = model.loss_gradients(inputs, targets)
        h = 1e-6
        for probe in range(20):
            layer = int(rng.integers(len(model.weights)))
            W = model.weights[layer]
            i = int(rng.integers(W.shape[0]))
            j = int(rng.integers(W.shape[1]))
            original = W[i, j]
            W[i, j] = original + h
            up = model.loss(inputs, targets)
            W[i, j] = original - h
            down = model.loss(inputs, targets)
            W[i, j] = original
            fd = (up - down) / (2 * h)
            assert abs(grads_w[layer][i, j] - fd) <= 1e-4 * max(abs(fd), 1e-8)
        # bias spot check
        fd_layer = 1
        b = model.biases[fd_layer]
        b[0] += h
        up = model.loss(inputs, targets)
        b[0] -= 2 * h
        down = model.loss(inputs, targets)
        b[0] += h
        fd = (up - down) / (2 * h)
        assert abs(grads_b[fd_layer][0] - fd) <= 1e-4 * max(abs(fd), 1e-8)

    def test_deterministic_prediction(self):
        schedule = make_schedule(50)
        dataset = constant_dataset(L=4, J=2)
        config = MlpTrainConfig(hidden_width=16, hidden_layers=2, epochs=5, batch_size=1)
        model = train_mlp_denoiser(dataset, schedule, config, np.random.default_rng(5))
        x_t = np.random.default_rng(6).standard_normal((2, 4, 2, 3))
        state = DiffusionState(x_t, 25)
        one = model.predict_x0(state, dataset[0][1])
        two = model.predict_x0(state, dataset[0][1])
        assert np.array_equal(one, two)

    def test_divergence_raises(self):
        schedule = make_schedule(50)
        dataset = constant_dataset(value=5.0, L=4, J=2)
        config = MlpTrainConfig(hidden_width=64, hidden_layers=2, epochs=200,
                                batch_size=1, learning_rate=5.0)
        with pytest.raises(TrainingDiverged, match="epoch"):
            train_mlp_denoiser(dataset, schedule, config, np.random.default_rng(7))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_mlp_denoiser([], make_schedule(10))

    def test_shape_mismatch_rejected(self):
        schedule = make_schedule(10)
        dataset = constant_dataset(L=4, J=2) + constant_dataset(L=5, J=2)
        with pytest.raises(ValueError, match="shape"):
            train_mlp_denoiser(dataset, schedule)


class TestCheckpoint:
    def test_round_trip_reproduces_predictions(self, tmp_path):
        schedule = make_schedule(50)
        dataset = constant_dataset(L=4, J=2)
        config = MlpTrainConfig(hidden_width=16, hidden_layers=2, epochs=10, batch_size=1)
        model = train_mlp_denoiser(dataset, schedule, config, np.random.default_rng(8))
        path = tmp_path / "model.ckpt"
        save_denoiser(model, path)
        loaded = load_denoiser(path)
        assert loaded.motion_shape == model.motion_shape
        assert loaded.schedule.T == schedule.T
        x_t = np.random.default_rng(9).standard_normal((2, 4, 2, 3))
        state = DiffusionState(x_t, 30)
        assert np.array_equal(
            loaded.predict_x0(state, dataset[0][1]),
            model.predict_x0(state, dataset[0][1]),
        )

    def test_save_is_deterministic(self, tmp_path):
        schedule = make_schedule(50)
        dataset = constant_dataset(L=4, J=2)
        config = MlpTrainConfig(hidden_width=16, hidden_layers=2, epochs=3, batch_size=1)
        model = train_mlp_denoiser(dataset, schedule, config, np.random.default_rng(10))
        save_denoiser(model, tmp_path / "a.ckpt")
        save_denoiser(model, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_truncated_checkpoint_rejected(self, tmp_path):
        schedule = make_schedule(50)
        dataset = constant_dataset(L=4, J=2)
        config = MlpTrainConfig(hidden_width=16, hidden_layers=2, epochs=1, batch_size=1)
        model = train_mlp_denoiser(dataset, schedule, config, np.random.default_rng(11))
        path = tmp_path / "model.ckpt"
        save_denoiser(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(ValueError, match="blob"):
            load_denoiser(path)
