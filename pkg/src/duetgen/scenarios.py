"""Procedural two-agent motion families and trajectory conditions.

Scenarios pair deterministic root geometry (engineered so tests know the
ground truth: exact separations, guaranteed near-collisions) with seeded
sinusoidal limb articulation plus smooth noise. Everything is a pure
function of (kind, L, fps, seed).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .motion import (
    ConditionLabel,
    MotionSequence,
    SkeletonSpec,
    Trajectory,
    TwoAgentMotion,
    default_skeleton,
)


class ScenarioKind(enum.Enum):
    CIRCLE_DUET = "circle-duet"
    APPROACH_COLLIDE = "approach-collide"
    MIRROR_WALK = "mirror-walk"
    ORBIT = "orbit"

    @property
    def condition(self) -> ConditionLabel:
        return ConditionLabel(self.value)


# Standing rest pose for the canonical 22-joint skeleton, ordered as
# motion.JOINT_NAMES; pelvis over the origin, toes toward +z, feet ~2 cm up.
_REST_POSE = np.array([
    [0.00, 0.95, 0.00],   # pelvis
    [0.00, 1.06, 0.01],   # spine1
    [0.00, 1.17, 0.01],   # spine2
    [0.00, 1.28, 0.00],   # spine3
    [0.00, 1.42, 0.00],   # neck
    [0.00, 1.56, 0.02],   # head
    [0.07, 1.34, 0.00],   # l_collar
    [0.19, 1.36, 0.00],   # l_shoulder
    [0.24, 1.09, 0.02],   # l_elbow
    [0.26, 0.83, 0.05],   # l_wrist
    [-0.07, 1.34, 0.00],  # r_collar
    [-0.19, 1.36, 0.00],  # r_shoulder
    [-0.24, 1.09, 0.02],  # r_elbow
    [-0.26, 0.83, 0.05],  # r_wrist
    [0.09, 0.88, 0.00],   # l_hip
    [0.10, 0.49, 0.01],   # l_knee
    [0.11, 0.08, -0.02],  # l_ankle
    [0.11, 0.015, 0.10],  # l_foot
    [-0.09, 0.88, 0.00],  # r_hip
    [-0.10, 0.49, 0.01],  # r_knee
    [-0.11, 0.08, -0.02], # r_ankle
    [-0.11, 0.015, 0.10], # r_foot
])

_FOOT_JOINTS = (17, 21)
_ANKLE_JOINTS = (16, 20)

# Per-joint swing amplitude (m) for the gait sinusoid, split into the
# horizontal plane and a damped vertical component.
_SWING_HORIZONTAL = np.zeros(22)
_SWING_VERTICAL = np.zeros(22)
for _j, _amp in [
    (5, 0.010),                    # head
    (8, 0.050), (9, 0.080),        # left elbow/wrist
    (12, 0.050), (13, 0.080),      # right elbow/wrist
    (15, 0.030), (16, 0.040), (17, 0.040),   # left leg
    (19, 0.030), (20, 0.040), (21, 0.040),   # right leg
]:
    _SWING_HORIZONTAL[_j] = _amp
_SWING_VERTICAL[[8, 9, 12, 13]] = 0.02
_SWING_VERTICAL[list(_ANKLE_JOINTS)] = 0.015
_SWING_VERTICAL[list(_FOOT_JOINTS)] = 0.012

_GAIT_HZ = 1.4
_NOISE_STD = 0.012
_FOOT_NOISE_STD = 0.003
_NOISE_SMOOTHING_FRAMES = 5.0


def rest_pose() -> np.ndarray:
    """(22, 3) standing pose matching default_skeleton()."""
    return _REST_POSE.copy()


def _smooth_noise(rng, n_frames: int, shape: tuple[int, ...], std: float) -> np.ndarray:
    """Gaussian-filtered white noise over frames, rescaled to `std`."""
    flat = rng.standard_normal((n_frames, int(np.prod(shape))))
    radius = int(3 * _NOISE_SMOOTHING_FRAMES)
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / _NOISE_SMOOTHING_FRAMES) ** 2)
    taps /= taps.sum()
    padded = np.concatenate([flat[:1].repeat(radius, 0), flat, flat[-1:].repeat(radius, 0)])
    smoothed = np.stack(
        [np.convolve(padded[:, c], taps, mode="valid") for c in range(flat.shape[1])],
        axis=1,
    )
    # the filter shrinks the variance; restore the requested scale
    gain = np.sqrt(np.sum(taps**2))
    return smoothed.reshape(n_frames, *shape) * (std / gain)


def _articulate(root_path: np.ndarray, fps: float, phase: float, rng) -> np.ndarray:
    """Attach the rest pose to a root path and add gait swing plus smooth
    noise; foot height stays within +-0.05 m of the ground."""
    n = root_path.shape[0]
    t = np.arange(n) / fps
    frames = np.tile(_REST_POSE, (n, 1, 1))
    frames[:, :, 0] += root_path[:, 0:1]
    frames[:, :, 2] += root_path[:, 1:2]

    swing = np.sin(2 * np.pi * _GAIT_HZ * t + phase)
    # left/right limbs in antiphase: flip the sign for right-side joints
    side = np.ones(22)
    side[10:14] = -1.0
    side[18:22] = -1.0
    frames[:, :, 2] += swing[:, None] * (_SWING_HORIZONTAL * side)[None, :]
    frames[:, :, 1] += np.abs(swing)[:, None] * _SWING_VERTICAL[None, :]

    noise = _smooth_noise(rng, n, (22, 3), _NOISE_STD)
    noise[:, list(_FOOT_JOINTS), 1] *= _FOOT_NOISE_STD / _NOISE_STD
    noise[:, list(_FOOT_JOINTS) + list(_ANKLE_JOINTS), :] *= 0.5
    # articulation never writes the root's ground-plane channels, so the
    # projected trajectory equals root_path exactly
    noise[:, 0, 0] = 0.0
    noise[:, 0, 2] = 0.0
    frames += noise
    return frames


def _root_paths(kind: ScenarioKind, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Ground-plane (n, 2) root paths for both agents."""
    u = np.linspace(0.0, 1.0, n)
    if kind is ScenarioKind.CIRCLE_DUET:
        radius = 1.5
        theta0 = rng.uniform(0.0, 2 * np.pi)
        theta = theta0 + 2 * np.pi * u
        path_a = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        path_b = radius * np.stack([np.cos(theta + np.pi), np.sin(theta + np.pi)], axis=1)
    elif kind is ScenarioKind.APPROACH_COLLIDE:
        # head-on crossing at frame n//2 with a small lateral offset, well
        # inside capsule range so penetration frames are guaranteed
        offset = rng.uniform(0.04, 0.09)
        path_a = np.stack([-2.0 + 4.0 * u, np.zeros(n)], axis=1)
        path_b = np.stack([2.0 - 4.0 * u, np.full(n, offset)], axis=1)
    elif kind is ScenarioKind.MIRROR_WALK:
        path_a = np.stack([-1.5 + 3.0 * u, np.full(n, -0.5)], axis=1)
        path_b = np.stack([-1.5 + 3.0 * u, np.full(n, 0.5)], axis=1)
    elif kind is ScenarioKind.ORBIT:
        theta0 = rng.uniform(0.0, 2 * np.pi)
        theta = theta0 + 2 * np.pi * u
        path_a = np.zeros((n, 2))
        path_b = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        raise ValueError(f"unknown scenario kind {kind!r}")
    return path_a, path_b


def generate_scenario(
    kind: ScenarioKind | str,
    n_frames: int = 210,
    fps: float = 30.0,
    rng=None,
) -> tuple[TwoAgentMotion, ConditionLabel]:
    """Build one seeded two-agent scenario of the given kind."""
    if isinstance(kind, str):
        try:
            kind = ScenarioKind(kind)
        except ValueError as exc:
            raise ValueError(
                f"unknown scenario kind {kind!r}; known: "
                f"{[k.value for k in ScenarioKind]}"
            ) from exc
    if n_frames < 2:
        raise ValueError(f"need at least 2 frames, got {n_frames}")
    if rng is None:
        rng = np.random.default_rng()
    path_a, path_b = _root_paths(kind, n_frames, rng)
    frames_a = _articulate(path_a, fps, phase=0.0, rng=rng)
    frames_b = _articulate(path_b, fps, phase=np.pi, rng=rng)
    motion = TwoAgentMotion(
        MotionSequence(frames_a, fps), MotionSequence(frames_b, fps)
    )
    return motion, kind.condition


def generate_trajectory_condition(shape: str, n_frames: int, scale: float) -> Trajectory:
    """Arc-length parameterized ground-plane target of the named shape:
    'line' from (0,0) to (scale,0), 'circle' of radius scale about the
    origin, or 's-curve' traversing scale in x with a sinusoidal sweep."""
    if n_frames < 2:
        raise ValueError(f"need at least 2 points, got {n_frames}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if shape == "line":
        u = np.linspace(0.0, 1.0, n_frames)
        points = np.stack([scale * u, np.zeros(n_frames)], axis=1)
    elif shape == "circle":
        theta = np.linspace(0.0, 2 * np.pi, n_frames)
        points = scale * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    elif shape == "s-curve":
        u = np.linspace(0.0, 1.0, 4 * n_frames)
        dense = np.stack([scale * u, 0.25 * scale * np.sin(2 * np.pi * u)], axis=1)
        seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        targets = np.linspace(0.0, arc[-1], n_frames)
        points = np.stack(
            [np.interp(targets, arc, dense[:, i]) for i in range(2)], axis=1
        )
    else:
        raise ValueError(f"unknown trajectory shape {shape!r}; known: line, circle, s-curve")
    return Trajectory(points)


@dataclass(frozen=True)
class DatasetItem:
    motion: TwoAgentMotion
    condition: ConditionLabel
    kind: ScenarioKind
    seed: tuple[int, int, int]


@dataclass(frozen=True)
class Dataset:
    """Scenario collection plus the tensor means used to fit the analytic
    prior (overall and per kind)."""

    items: tuple[DatasetItem, ...]
    mean_motion: np.ndarray
    kind_means: dict[ScenarioKind, np.ndarray]
    fps: float

    @property
    def pairs(self) -> list[tuple[TwoAgentMotion, ConditionLabel]]:
        return [(item.motion, item.condition) for item in self.items]


def build_dataset(
    n_per_kind: int,
    kinds: tuple[ScenarioKind, ...] = tuple(ScenarioKind),
    n_frames: int = 210,
    fps: float = 30.0,
    seed: int = 0,
) -> Dataset:
    """Generate n_per_kind scenarios per kind with per-item derived seeds
    (base seed, kind index, item index), so items are reproducible one by
    one."""
    if n_per_kind < 1:
        raise ValueError(f"n_per_kind must be >= 1, got {n_per_kind}")
    items = []
    for kind in kinds:
        kind_index = list(ScenarioKind).index(kind)
        for i in range(n_per_kind):
            item_seed = (int(seed), kind_index, i)
            rng = np.random.default_rng(item_seed)
            motion, condition = generate_scenario(kind, n_frames, fps, rng)
            items.append(DatasetItem(motion, condition, kind, item_seed))
    tensors = np.stack([item.motion.as_tensor() for item in items])
    kind_means = {
        kind: tensors[[i for i, item in enumerate(items) if item.kind is kind]].mean(axis=0)
        for kind in kinds
    }
    return Dataset(tuple(items), tensors.mean(axis=0), kind_means, fps)


def skeleton_for_scenarios() -> SkeletonSpec:
    return default_skeleton()
