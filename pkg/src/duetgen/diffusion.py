"""Noise schedule, forward noising, reverse samplers and the denoiser
contract.

Step indexing: t runs over 1..T with arrays stored 0-based, so beta[t-1]
and alpha_bar[t-1] belong to step t; alpha_bar(0) is defined as 1 (the
clean signal). Denoisers predict the clean tensor x0 directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .motion import ConditionLabel, TwoAgentMotion


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process coefficients: beta_t and the cumulative signal
    retention alpha_bar_t = prod_{s<=t} (1 - beta_s)."""

    beta: np.ndarray
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 1 or beta.size < 2:
            raise ValueError(f"beta must be a 1-d array of length >= 2, got shape {beta.shape}")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("beta values must lie strictly inside (0, 1)")
        beta.setflags(write=False)
        alpha_bar = np.cumprod(1.0 - beta)
        if np.any(np.diff(alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def T(self) -> int:
        return self.beta.size

    def beta_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t, extended with alpha_bar_0 = 1."""
        if t == 0:
            return 1.0
        self._check_step(t)
        return float(self.alpha_bar[t - 1])

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"step t={t} outside [1, {self.T}]")


def make_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 2e-2) -> NoiseSchedule:
    """Linear beta ramp from beta_min to beta_max over T steps."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0 < beta_min <= beta_max < 1:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    return NoiseSchedule(np.linspace(beta_min, beta_max, T))


@dataclass(frozen=True)
class DiffusionState:
    """A noisy two-agent motion tensor (2, L, J, 3) at step index t."""

    x: np.ndarray
    t: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 4 or x.shape[0] != 2 or x.shape[3] != 3:
            raise ValueError(f"state tensor must be (2, L, J, 3), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("state tensor contains non-finite values")
        if self.t < 0:
            raise ValueError(f"step index must be >= 0, got {self.t}")
        object.__setattr__(self, "x", x)


@runtime_checkable
class DenoiserModel(Protocol):
    """Anything that maps a noisy state to a clean-motion prediction."""

    #: shape (2, L, J, 3) of the motion tensors this model works on
    motion_shape: tuple[int, int, int, int]

    def predict_x0(self, state: DiffusionState, condition: ConditionLabel | None) -> np.ndarray:
        ...


def forward_noise(x0: np.ndarray, t: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Sample the forward process: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, t in [1, T]."""
    x0 = np.asarray(x0, dtype=float)
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step t={t} outside [1, {schedule.T}]")
    ab = schedule.alpha_bar_at(t)
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_mean_variance(
    x0_pred: np.ndarray, x_t: np.ndarray, t: int, schedule: NoiseSchedule
) -> tuple[np.ndarray, float]:
    """Mean and (scalar) variance of the DDPM posterior q(x_{t-1} | x_t, x0)."""
    ab_t = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    beta_t = schedule.beta_at(t)
    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(1.0 - beta_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * np.asarray(x0_pred) + coef_xt * np.asarray(x_t)
    variance = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return mean, variance


def posterior_step(
    x0_pred: np.ndarray, x_t: np.ndarray, t: int, schedule: NoiseSchedule, rng
) -> np.ndarray:
    """Draw x_{t-1} from the DDPM posterior. At t=1 the variance vanishes
    and the result is exactly x0_pred."""
    mean, variance = posterior_mean_variance(x0_pred, x_t, t, schedule)
    if variance == 0.0:
        return mean
    return mean + np.sqrt(variance) * rng.standard_normal(mean.shape)


def ddim_step(
    x0_pred: np.ndarray, x_t: np.ndarray, t: int, t_prev: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from step t to t_prev < t."""
    if not 0 <= t_prev < t:
        raise ValueError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    ab_t = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t_prev)
    x0_pred = np.asarray(x0_pred, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    eps_hat = (x_t - np.sqrt(ab_t) * x0_pred) / np.sqrt(1.0 - ab_t)
    return np.sqrt(ab_prev) * x0_pred + np.sqrt(1.0 - ab_prev) * eps_hat


def ddim_subsequence(T: int, n_steps: int = 50) -> list[int]:
    """Uniform descending step subsequence T, ..., 0 with n_steps transitions."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"n_steps must be in [1, {T}], got {n_steps}")
    seq = np.unique(np.linspace(0, T, n_steps + 1).round().astype(int))[::-1]
    return [int(t) for t in seq]


def _validate_subsequence(steps: Sequence[int], T: int) -> list[int]:
    steps = [int(t) for t in steps]
    if len(steps) < 2 or steps[-1] != 0:
        raise ValueError("step subsequence must end at 0")
    if steps[0] > T:
        raise ValueError(f"step subsequence starts at {steps[0]} > T={T}")
    if any(b >= a for a, b in zip(steps, steps[1:])):
        raise ValueError("step subsequence must be strictly descending")
    return steps


class Hook(Protocol):
    """Sampler hook: either method may be omitted. pre_step transforms the
    noisy state before denoising; post_predict transforms the clean-motion
    prediction before the reverse update."""

    def pre_step(self, x_t: np.ndarray, t: int) -> np.ndarray: ...

    def post_predict(self, x0_pred: np.ndarray, t: int) -> np.ndarray: ...


def sample(
    denoiser: DenoiserModel,
    condition: ConditionLabel | None,
    schedule: NoiseSchedule,
    step_subsequence: Sequence[int] | None = None,
    hooks: Sequence[object] = (),
    rng=None,
    sampler: str = "ddim",
    fps: float = 30.0,
) -> TwoAgentMotion:
    """Run the reverse process from x_T ~ N(0, I) down to a clean motion.

    Each transition t -> t_prev applies, in order: every hook's pre_step on
    x_t, the denoiser, every hook's post_predict on the x0 prediction, then
    the DDIM (default) or stochastic posterior update. The posterior sampler
    requires a consecutive subsequence T, T-1, ..., 0.
    """
    if rng is None:
        rng = np.random.default_rng()
    if step_subsequence is None:
        steps = ddim_subsequence(schedule.T, min(50, schedule.T))
    else:
        steps = _validate_subsequence(step_subsequence, schedule.T)
    if sampler not in ("ddim", "posterior"):
        raise ValueError(f"sampler must be 'ddim' or 'posterior', got {sampler!r}")
    if sampler == "posterior" and any(a - b != 1 for a, b in zip(steps, steps[1:])):
        raise ValueError("posterior sampler needs a consecutive step subsequence")

    shape = tuple(denoiser.motion_shape)
    x = rng.standard_normal(shape)
    for t, t_prev in zip(steps[:-1], steps[1:]):
        for hook in hooks:
            pre = getattr(hook, "pre_step", None)
            if pre is not None:
                x = pre(x, t)
                if x.shape != shape:
                    raise ValueError(f"hook {hook!r} returned pre_step shape {x.shape}")
        x0_pred = denoiser.predict_x0(DiffusionState(x, t), condition)
        if x0_pred.shape != shape:
            raise ValueError(f"denoiser returned shape {x0_pred.shape}, expected {shape}")
        for hook in hooks:
            post = getattr(hook, "post_predict", None)
            if post is not None:
                x0_pred = post(x0_pred, t)
                if x0_pred.shape != shape:
                    raise ValueError(f"hook {hook!r} returned post_predict shape {x0_pred.shape}")
        if sampler == "ddim":
            x = ddim_step(x0_pred, x, t, t_prev, schedule)
        else:
            x = posterior_step(x0_pred, x, t, schedule, rng)
    return TwoAgentMotion.from_tensor(x, fps=fps)
