"""Desk-scale denoisers: an analytic Gaussian prior whose clean-signal
posterior is available in closed form (the exact oracle for the sampling
machinery), and a small feed-forward network trained by hand-rolled
backprop to predict x0 from (x_t, t, condition).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import DiffusionState, NoiseSchedule, forward_noise, make_schedule
from .motion import ConditionLabel, TwoAgentMotion


class TrainingDiverged(RuntimeError):
    """Raised when the training loss turns non-finite."""


def squared_exponential_kernel(n: int, length_scale: float, variance: float) -> np.ndarray:
    """n x n squared-exponential kernel over frame indices."""
    if length_scale <= 0 or variance <= 0:
        raise ValueError("length_scale and variance must be positive")
    idx = np.arange(n)
    sq = (idx[:, None] - idx[None, :]) ** 2
    return variance * np.exp(-0.5 * sq / length_scale**2)


class AnalyticGaussianPrior:
    """Gaussian motion prior N(mean, Sigma) with Sigma block-diagonal across
    (agent, joint, coordinate) channels and a shared squared-exponential
    temporal kernel per channel.

    Under the forward process x_t = sqrt(ab) x0 + sqrt(1-ab) eps the exact
    posterior mean E[x0 | x_t] is linear in x_t and diagonal in the kernel
    eigenbasis, so predictions cost one L x L rotation each way.
    """

    def __init__(
        self,
        mean: np.ndarray,
        schedule: NoiseSchedule,
        length_scale: float = 10.0,
        variance: float = 0.25,
        jitter: float = 1e-8,
    ):
        mean = np.asarray(mean, dtype=float)
        if mean.ndim != 4 or mean.shape[0] != 2 or mean.shape[3] != 3:
            raise ValueError(f"mean must have shape (2, L, J, 3), got {mean.shape}")
        self.mean = mean
        self.schedule = schedule
        self.length_scale = float(length_scale)
        self.variance = float(variance)
        self.jitter = float(jitter)
        L = mean.shape[1]
        kernel = squared_exponential_kernel(L, length_scale, variance)
        kernel += jitter * np.eye(L)
        eigvals, eigvecs = np.linalg.eigh(kernel)
        if np.any(eigvals <= 0):
            raise ValueError("temporal kernel is not positive definite; raise jitter")
        self._eigvals = eigvals
        self._eigvecs = eigvecs
        self._kernel = kernel

    @property
    def motion_shape(self) -> tuple[int, int, int, int]:
        return tuple(self.mean.shape)

    def kernel_matrix(self) -> np.ndarray:
        """The per-channel L x L temporal covariance (jitter included)."""
        return self._kernel.copy()

    def marginal_variance(self) -> float:
        """Prior variance of any single coordinate (diagonal of Sigma)."""
        return self.variance + self.jitter

    def predict_x0(self, state: DiffusionState, condition: ConditionLabel | None = None) -> np.ndarray:
        return analytic_predict_x0(self, state.x, state.t, self.schedule)


def analytic_predict_x0(
    prior: AnalyticGaussianPrior, x_t: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Exact posterior mean of the clean signal under a Gaussian prior:

        m + sqrt(ab) Sigma (ab Sigma + (1 - ab) I)^{-1} (x_t - sqrt(ab) m)

    evaluated per channel in the temporal-kernel eigenbasis.
    """
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape != prior.motion_shape:
        raise ValueError(f"x_t has shape {x_t.shape}, prior expects {prior.motion_shape}")
    ab = schedule.alpha_bar_at(t)
    if t == 0:
        return x_t.copy()
    lam, U = prior._eigvals, prior._eigvecs
    gain = np.sqrt(ab) * lam / (ab * lam + (1.0 - ab))
    dev = x_t - np.sqrt(ab) * prior.mean
    # Rotate the frame axis into the eigenbasis, scale, rotate back.
    flat = np.moveaxis(dev, 1, 0).reshape(dev.shape[1], -1)
    filtered = U @ (gain[:, None] * (U.T @ flat))
    out = np.moveaxis(filtered.reshape(dev.shape[1], 2, *dev.shape[2:]), 0, 1)
    return prior.mean + out


def _time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the step index, geometric frequency ladder."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


@dataclass
class MlpTrainConfig:
    """Hyperparameters for the feed-forward denoiser."""

    hidden_width: int = 256
    hidden_layers: int = 3
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    time_embed_dim: int = 32

    def __post_init__(self):
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("network must have at least one hidden unit and layer")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be an even number >= 2")


class MlpDenoiser:
    """tanh MLP predicting the flattened clean motion from the flattened
    noisy motion, a sinusoidal time embedding, and the condition one-hot."""

    def __init__(
        self,
        motion_shape: tuple[int, int, int, int],
        schedule: NoiseSchedule,
        condition_dim: int,
        config: MlpTrainConfig,
        rng,
    ):
        self.motion_shape = tuple(int(v) for v in motion_shape)
        self.schedule = schedule
        self.condition_dim = int(condition_dim)
        self.config = config
        motion_dim = int(np.prod(self.motion_shape))
        sizes = (
            [motion_dim + config.time_embed_dim + condition_dim]
            + [config.hidden_width] * config.hidden_layers
            + [motion_dim]
        )
        self.layer_sizes = sizes
        # He-style scaling keeps tanh pre-activations O(1) at init.
        self.weights = [
            rng.standard_normal((m, n)) * np.sqrt(2.0 / n)
            for n, m in zip(sizes[:-1], sizes[1:])
        ]
        self.biases = [np.zeros(m) for m in sizes[1:]]
        self.loss_history: list[float] = []

    def features(self, x_t: np.ndarray, t: int, condition: ConditionLabel | None) -> np.ndarray:
        cond = np.zeros(self.condition_dim)
        if condition is not None:
            embedding = condition.embedding
            if embedding.size != self.condition_dim:
                raise ValueError(
                    f"condition embedding has size {embedding.size}, model expects "
                    f"{self.condition_dim}"
                )
            cond = embedding
        emb = _time_embedding(t, self.config.time_embed_dim)
        return np.concatenate([np.asarray(x_t, dtype=float).ravel(), emb, cond])

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        """Forward pass on a (B, D_in) batch; returns (B, D_out)."""
        a = inputs
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W.T + b
            a = z if i == last else np.tanh(z)
        return a

    def predict_x0(self, state: DiffusionState, condition: ConditionLabel | None) -> np.ndarray:
        feats = self.features(state.x, state.t, condition)
        out = self.forward(feats[None, :])[0]
        return out.reshape(self.motion_shape)

    def loss(self, inputs: np.ndarray, targets: np.ndarray) -> float:
        """Squared x0-prediction error, summed per example and averaged over
        the batch. (A per-entry mean would scale SGD steps down with the
        output width; this form keeps the default learning rate usable
        across motion sizes.)"""
        pred = self.forward(inputs)
        return float(np.mean(np.sum((pred - targets) ** 2, axis=1)))

    def loss_gradients(
        self, inputs: np.ndarray, targets: np.ndarray
    ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Backprop: returns (loss, dL/dW per layer, dL/db per layer)."""
        activations = [inputs]
        last = len(self.weights) - 1
        a = inputs
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W.T + b
            a = z if i == last else np.tanh(z)
            activations.append(a)
        pred = activations[-1]
        loss = float(np.mean(np.sum((pred - targets) ** 2, axis=1)))
        # dL/dz for the linear output layer, batch-mean scaling
        delta = 2.0 * (pred - targets) / pred.shape[0]
        grads_w: list[np.ndarray] = [None] * len(self.weights)
        grads_b: list[np.ndarray] = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = delta.T @ activations[i]
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (1.0 - activations[i] ** 2)
        return loss, grads_w, grads_b


def train_mlp_denoiser(
    dataset: list[tuple[TwoAgentMotion, ConditionLabel]],
    schedule: NoiseSchedule,
    config: MlpTrainConfig | None = None,
    rng=None,
    log=None,
) -> MlpDenoiser:
    """Fit the MLP by minibatch SGD on the x0-prediction MSE.

    Each example pairs a uniformly drawn step t with one forward-noising
    draw; per-epoch losses land in model.loss_history (and `log`, if given,
    receives one line per epoch). Raises TrainingDiverged on a non-finite
    loss.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if config is None:
        config = MlpTrainConfig()
    if rng is None:
        rng = np.random.default_rng()
    shapes = {motion.as_tensor().shape for motion, _ in dataset}
    if len(shapes) != 1:
        raise ValueError(f"dataset motions disagree on shape: {sorted(shapes)}")
    motion_shape = shapes.pop()
    condition_dim = dataset[0][1].embedding.size

    model = MlpDenoiser(motion_shape, schedule, condition_dim, config, rng)
    x0s = [motion.as_tensor() for motion, _ in dataset]
    conditions = [label for _, label in dataset]
    n = len(dataset)

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            inputs, targets = [], []
            for i in batch_idx:
                t = int(rng.integers(1, schedule.T + 1))
                x_t = forward_noise(x0s[i], t, schedule, rng)
                inputs.append(model.features(x_t, t, conditions[i]))
                targets.append(x0s[i].ravel())
            loss, grads_w, grads_b = model.loss_gradients(
                np.asarray(inputs), np.asarray(targets)
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}, batch starting {start}; "
                    f"last finite epoch losses: {model.loss_history[-3:]}"
                )
            for W, b, gw, gb in zip(model.weights, model.biases, grads_w, grads_b):
                W -= config.learning_rate * gw
                b -= config.learning_rate * gb
            epoch_losses.append(loss)
        model.loss_history.append(float(np.mean(epoch_losses)))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} loss {model.loss_history[-1]:.6f}")
    return model


CHECKPOINT_FORMAT = "duetgen-denoiser"
CHECKPOINT_VERSION = 1
_CHECKPOINT_DTYPE = "<f8"


def save_denoiser(model: MlpDenoiser, path) -> None:
    """Write a checkpoint: one JSON header line (architecture, schedule,
    float width) followed by the flat little-endian float64 weight blob."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": _CHECKPOINT_DTYPE,
        "motion_shape": list(model.motion_shape),
        "condition_dim": model.condition_dim,
        "layer_sizes": model.layer_sizes,
        "time_embed_dim": model.config.time_embed_dim,
        "hidden_width": model.config.hidden_width,
        "hidden_layers": model.config.hidden_layers,
        "schedule": {
            "T": model.schedule.T,
            "beta_min": float(model.schedule.beta[0]),
            "beta_max": float(model.schedule.beta[-1]),
        },
    }
    flat = np.concatenate(
        [w.ravel() for w in model.weights] + [b.ravel() for b in model.biases]
    ).astype(_CHECKPOINT_DTYPE)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        fh.write(flat.tobytes())


def load_denoiser(path) -> MlpDenoiser:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing checkpoint header line")
    try:
        header = json.loads(raw[:newline].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: checkpoint version {header.get('version')} unsupported"
        )
    sched = header["schedule"]
    schedule = make_schedule(sched["T"], sched["beta_min"], sched["beta_max"])
    config = MlpTrainConfig(
        hidden_width=header["hidden_width"],
        hidden_layers=header["hidden_layers"],
        time_embed_dim=header["time_embed_dim"],
    )
    model = MlpDenoiser(
        tuple(header["motion_shape"]),
        schedule,
        header["condition_dim"],
        config,
        np.random.default_rng(0),
    )
    if model.layer_sizes != header["layer_sizes"]:
        raise ValueError(
            f"{path}: layer_sizes {header['layer_sizes']} inconsistent with "
            f"architecture fields (expected {model.layer_sizes})"
        )
    flat = np.frombuffer(raw[newline + 1 :], dtype=_CHECKPOINT_DTYPE)
    expected = sum(w.size for w in model.weights) + sum(b.size for b in model.biases)
    if flat.size != expected:
        raise ValueError(
            f"{path}: weight blob holds {flat.size} floats, architecture needs {expected}"
        )
    offset = 0
    for i, w in enumerate(model.weights):
        model.weights[i] = flat[offset : offset + w.size].reshape(w.shape).copy()
        offset += w.size
    for i, b in enumerate(model.biases):
        model.biases[i] = flat[offset : offset + b.size].copy()
        offset += b.size
    return model
