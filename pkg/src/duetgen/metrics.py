"""Desk-scale evaluation metrics: trajectory adherence, penetration-frame
counts, tail velocity similarity, set diversity, and jerk-based smoothness.
All pure functions, deterministic given an rng seed.
"""

from __future__ import annotations

import numpy as np

from .collision import detect_conflicts_sequence
from .motion import GROUND_AXES, MotionSequence, SkeletonSpec, Trajectory, TwoAgentMotion

_VEL_EPSILON = 1e-6


def trajectory_rmse(
    motion: MotionSequence, target: Trajectory, skeleton: SkeletonSpec
) -> float:
    """Root-mean-square ground-plane distance between the root path and the
    target, in meters."""
    if motion.length != target.length:
        raise ValueError(
            f"motion has {motion.length} frames, target has {target.length}"
        )
    root = motion.frames[:, skeleton.root_index][:, list(GROUND_AXES)]
    gaps = np.linalg.norm(root - target.planar, axis=1)
    return float(np.sqrt(np.mean(gaps**2)))


def penetration_frames(x: TwoAgentMotion, skeleton: SkeletonSpec) -> int:
    """Number of frames whose interaction domains (bone capsules) overlap."""
    mask = detect_conflicts_sequence(x.agent_a.frames, x.agent_b.frames, skeleton)
    return int(mask.sum())


def final_velocity_similarity(x: TwoAgentMotion, tail: int) -> float:
    """Mean per-joint cosine similarity of the two agents' velocities over
    the last `tail` frame gaps; terms with a near-zero norm count as 0."""
    if not 1 <= tail <= x.length - 1:
        raise ValueError(f"tail must be in [1, {x.length - 1}], got {tail}")
    va = np.diff(x.agent_a.frames, axis=0)[-tail:]
    vb = np.diff(x.agent_b.frames, axis=0)[-tail:]
    na = np.linalg.norm(va, axis=-1)
    nb = np.linalg.norm(vb, axis=-1)
    live = (na >= _VEL_EPSILON) & (nb >= _VEL_EPSILON)
    denom = np.where(live, na * nb, 1.0)
    cos = np.where(live, np.sum(va * vb, axis=-1) / denom, 0.0)
    return float(np.mean(cos))


def diversity(
    motions: list[TwoAgentMotion], n_pairs: int | None = None, rng=None
) -> float:
    """Mean Euclidean distance between flattened motion tensors.

    With n_pairs=None every unordered pair is used; otherwise n_pairs random
    ordered pairs of distinct motions are sampled with `rng`.
    """
    if len(motions) < 2:
        raise ValueError(f"need at least 2 motions, got {len(motions)}")
    flats = np.stack([m.as_tensor().ravel() for m in motions])
    if n_pairs is None:
        total, count = 0.0, 0
        for i in range(len(motions)):
            total += float(np.sum(np.linalg.norm(flats[i + 1 :] - flats[i], axis=1)))
            count += len(motions) - i - 1
        return total / count
    if rng is None:
        rng = np.random.default_rng()
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    first = rng.integers(0, len(motions), size=n_pairs)
    shift = rng.integers(1, len(motions), size=n_pairs)
    second = (first + shift) % len(motions)
    return float(np.mean(np.linalg.norm(flats[first] - flats[second], axis=1)))


def smoothness(motion: MotionSequence) -> float:
    """Mean jerk magnitude: the norm of the third finite difference of the
    joint positions, averaged over joints and frames (m/frame^3)."""
    if motion.length < 4:
        raise ValueError(f"need at least 4 frames for jerk, got {motion.length}")
    f = motion.frames
    jerk = f[3:] - 3.0 * f[2:-1] + 3.0 * f[1:-2] - f[:-3]
    return float(np.mean(np.linalg.norm(jerk, axis=-1)))
