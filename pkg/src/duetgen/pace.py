"""Trajectory guidance for the leader: within a mid-denoising window the
leader's root ground-plane channels are overwritten with the (noised)
target trajectory before each denoising step, and the predicted clean
motion is pulled toward the target after it. No other channel is ever
written, which is what makes the guidance unidirectional.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import adapter as _adapter
from .diffusion import (
    DiffusionState,
    NoiseSchedule,
    forward_noise,
    sample,
)
from .motion import GROUND_AXES, ConditionLabel, SkeletonSpec, Trajectory, TwoAgentMotion

_AGENT_INDEX = {"a": 0, "b": 1}


@dataclass(frozen=True)
class GuidanceWindow:
    """Denoising-step interval [w_end*T, w_start*T] (fractions of T) during
    which guidance fires; both bounds inclusive."""

    w_start: float = 0.7
    w_end: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.w_end <= self.w_start <= 1.0:
            raise ValueError(
                f"need 1 >= w_start >= w_end >= 0, got ({self.w_start}, {self.w_end})"
            )

    def bounds(self, T: int) -> tuple[int, int]:
        """Integer step bounds; fractional products are floored."""
        # the 1e-9 slack keeps e.g. 0.7 * 1000 from flooring to 699
        lo = int(np.floor(self.w_end * T + 1e-9))
        hi = int(np.floor(self.w_start * T + 1e-9))
        return lo, hi


def in_window(t: int, T: int, window: GuidanceWindow) -> bool:
    """True iff step t falls inside the guidance window (inclusive)."""
    lo, hi = window.bounds(T)
    return lo <= t <= hi


@dataclass(frozen=True)
class PaceConfig:
    """Pace-controller settings.

    grad_step_size is normalized so 1.0 projects the predicted root path
    exactly onto the target in one refinement step; 0.5 halves the residual.
    injection_mode 'noised' forward-noises the target to the step's noise
    level before writing it; 'raw' writes the clean values verbatim.
    """

    window: GuidanceWindow = field(default_factory=GuidanceWindow)
    grad_step_size: float = 0.5
    grad_steps: int = 1
    injection_mode: str = "noised"
    target_agent: str = "a"

    def __post_init__(self):
        if not 0.0 < self.grad_step_size <= 1.0:
            raise ValueError(f"grad_step_size must be in (0, 1], got {self.grad_step_size}")
        if self.grad_steps < 1:
            raise ValueError(f"grad_steps must be >= 1, got {self.grad_steps}")
        if self.injection_mode not in ("noised", "raw"):
            raise ValueError(f"injection_mode must be 'noised' or 'raw', got {self.injection_mode!r}")
        if self.target_agent not in ("a", "b", "both"):
            raise ValueError(f"target_agent must be 'a', 'b' or 'both', got {self.target_agent!r}")


def _resolve_targets(
    target, config: PaceConfig, length: int
) -> list[tuple[int, np.ndarray]]:
    """Normalize the target argument to [(agent_index, (L, 2) array), ...]."""
    if config.target_agent == "both":
        if not isinstance(target, (tuple, list)) or len(target) != 2:
            raise ValueError("target_agent 'both' needs a pair of trajectories")
        pairs = [(0, target[0]), (1, target[1])]
    else:
        if isinstance(target, (tuple, list)):
            raise ValueError(f"target_agent {config.target_agent!r} takes a single trajectory")
        pairs = [(_AGENT_INDEX[config.target_agent], target)]
    resolved = []
    for agent, traj in pairs:
        points = traj.planar if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
        if points.shape != (length, 2):
            raise ValueError(
                f"trajectory for agent {agent} has shape {points.shape}, "
                f"motion needs ({length}, 2)"
            )
        resolved.append((agent, points))
    return resolved


def inject_trajectory(
    state: DiffusionState,
    target,
    t: int,
    schedule: NoiseSchedule,
    config: PaceConfig,
    rng,
    root_index: int = 0,
) -> DiffusionState:
    """Overwrite the targeted agents' root ground-plane channels of x_t.

    In 'noised' mode the written values are a forward-noising draw of the
    target, so the inpainted region sits at the step's noise level; 'raw'
    writes the clean trajectory verbatim. All other channels pass through
    bit-identically.
    """
    x = state.x.copy()
    for agent, points in _resolve_targets(target, config, x.shape[1]):
        if config.injection_mode == "raw":
            values = points
        else:
            values = forward_noise(points, t, schedule, rng)
        x[agent, :, root_index, list(GROUND_AXES)] = values.T
    return DiffusionState(x, state.t)


def refine_x0(
    x0_pred: np.ndarray,
    target,
    config: PaceConfig,
    root_index: int = 0,
) -> np.ndarray:
    """Gradient refinement of the predicted clean motion toward the target.

    The loss is the per-frame mean squared root-to-target distance; with the
    exact line-search normalization each step contracts the residual by
    (1 - grad_step_size) on the guided channels and touches nothing else.
    """
    x = np.asarray(x0_pred, dtype=float).copy()
    for agent, points in _resolve_targets(target, config, x.shape[1]):
        channels = x[agent, :, root_index, list(GROUND_AXES)].T
        for _ in range(config.grad_steps):
            channels = channels - config.grad_step_size * (channels - points)
        x[agent, :, root_index, list(GROUND_AXES)] = channels.T
    return x


class PaceControllerHook:
    """Sampler hook bundling windowed injection (pre_step) and prediction
    refinement (post_predict). Draws injection noise from the rng it was
    constructed with."""

    def __init__(
        self,
        target,
        schedule: NoiseSchedule,
        config: PaceConfig,
        rng,
        root_index: int = 0,
    ):
        self.target = target
        self.schedule = schedule
        self.config = config
        self.rng = rng
        self.root_index = root_index

    def _active(self, t: int) -> bool:
        return in_window(t, self.schedule.T, self.config.window)

    def pre_step(self, x_t: np.ndarray, t: int) -> np.ndarray:
        if not self._active(t):
            return x_t
        state = inject_trajectory(
            DiffusionState(x_t, t), self.target, t, self.schedule, self.config,
            self.rng, self.root_index,
        )
        return state.x

    def post_predict(self, x0_pred: np.ndarray, t: int) -> np.ndarray:
        if not self._active(t):
            return x0_pred
        return refine_x0(x0_pred, self.target, self.config, self.root_index)


def guided_sample(
    denoiser,
    condition: ConditionLabel | None,
    target,
    schedule: NoiseSchedule,
    config: PaceConfig | None = None,
    rng=None,
    *,
    adapter_config: "_adapter.AdapterConfig | None" = None,
    skeleton: SkeletonSpec | None = None,
    step_subsequence: Sequence[int] | None = None,
    sampler: str = "ddim",
    fps: float = 30.0,
) -> TwoAgentMotion:
    """Pace-controlled sampling: diffusion.sample with the controller hook,
    plus the kinematic synchronization adapter's hook when an adapter config
    is supplied (it needs the skeleton for collision tests)."""
    if config is None:
        config = PaceConfig()
    if rng is None:
        rng = np.random.default_rng()
    if step_subsequence is None:
        from .diffusion import ddim_subsequence

        step_subsequence = ddim_subsequence(schedule.T, min(50, schedule.T))
    root_index = skeleton.root_index if skeleton is not None else 0
    hooks: list[object] = [
        PaceControllerHook(target, schedule, config, rng, root_index)
    ]
    if adapter_config is not None:
        if skeleton is None:
            raise ValueError("adapter_config requires a skeleton")
        if skeleton.joint_count != denoiser.motion_shape[2]:
            raise ValueError(
                f"skeleton has {skeleton.joint_count} joints, denoiser motions have "
                f"{denoiser.motion_shape[2]}"
            )
        follower = 0 if config.target_agent == "b" else 1
        hooks.append(
            _adapter.adapter_hook(
                adapter_config, skeleton, schedule, step_subsequence,
                config.window, follower=follower,
            )
        )
    return sample(
        denoiser, condition, schedule, step_subsequence, hooks, rng,
        sampler=sampler, fps=fps,
    )
