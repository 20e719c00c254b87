"""Capsule collision detection between two skeletons.

Each bone becomes a capsule (segment swept by a radius); two agents conflict
at a frame when any inter-agent capsule pair overlaps, i.e. the distance
between the bone segments drops strictly below the sum of the radii.
Everything is vectorized over frames x bone pairs so per-sequence detection
is a handful of numpy calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motion import SkeletonSpec

_EPS = 1e-12


@dataclass(frozen=True)
class CapsuleSet:
    """One capsule per bone: segment endpoints p, q (B, 3) and radii (B,)."""

    p: np.ndarray
    q: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        radius = np.asarray(self.radius, dtype=float)
        if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"endpoints must both be (B, 3), got {p.shape} and {q.shape}")
        if radius.shape != (p.shape[0],):
            raise ValueError(f"radius must be (B,), got {radius.shape}")
        if np.any(radius <= 0):
            raise ValueError("capsule radii must be positive")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("capsule endpoints must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "radius", radius)

    def __len__(self) -> int:
        return self.p.shape[0]

    @property
    def capsules(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        return [(self.p[i], self.q[i], float(self.radius[i])) for i in range(len(self))]


def pose_to_capsules(pose: np.ndarray, skeleton: SkeletonSpec) -> CapsuleSet:
    """Map one frame of joint positions to its bone capsules."""
    pose = np.asarray(pose, dtype=float)
    if pose.shape != (skeleton.joint_count, 3):
        raise ValueError(
            f"pose must have shape ({skeleton.joint_count}, 3), got {pose.shape}"
        )
    bones = np.asarray(skeleton.bones)
    return CapsuleSet(pose[bones[:, 0]], pose[bones[:, 1]], skeleton.capsule_radius)


def _point_segment_sq(point, a0, d, dd) -> np.ndarray:
    """Squared distance from `point` to segment a0 + t*d, t in [0, 1];
    dd = |d|^2 precomputed. Zero-length segments collapse to a0."""
    t = np.sum((point - a0) * d, axis=-1) / np.where(dd > _EPS, dd, 1.0)
    t = np.where(dd > _EPS, np.clip(t, 0.0, 1.0), 0.0)
    diff = a0 + t[..., None] * d - point
    return np.sum(diff * diff, axis=-1)


def segment_segment_distance(p0, p1, q0, q1) -> np.ndarray:
    """Minimum distance between segments [p0, p1] and [q0, q1].

    Broadcasts over leading dimensions. Exact: the minimum is either at the
    interior stationary point of the distance quadratic (when feasible) or
    on an edge of the (s, t) parameter square, and every edge case is a
    point-to-segment projection. Degenerate segments fall out naturally.
    """
    p0, p1, q0, q1 = np.broadcast_arrays(
        np.asarray(p0, dtype=float), np.asarray(p1, dtype=float),
        np.asarray(q0, dtype=float), np.asarray(q1, dtype=float),
    )
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    denom = a * e - b * b

    safe = np.where(denom > _EPS, denom, 1.0)
    s = (b * f - c * e) / safe
    t = (a * f - b * c) / safe
    interior_ok = (denom > _EPS) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
    diff = p0 + s[..., None] * d1 - q0 - t[..., None] * d2
    interior_sq = np.where(interior_ok, np.sum(diff * diff, axis=-1), np.inf)

    best_sq = np.minimum(interior_sq, _point_segment_sq(p0, q0, d2, e))
    best_sq = np.minimum(best_sq, _point_segment_sq(p1, q0, d2, e))
    best_sq = np.minimum(best_sq, _point_segment_sq(q0, p0, d1, a))
    best_sq = np.minimum(best_sq, _point_segment_sq(q1, p0, d1, a))
    return np.sqrt(best_sq)


def capsule_pair_distances(capsules_a: CapsuleSet, capsules_b: CapsuleSet) -> np.ndarray:
    """(B_a, B_b) segment distances between every inter-set capsule pair."""
    return segment_segment_distance(
        capsules_a.p[:, None, :], capsules_a.q[:, None, :],
        capsules_b.p[None, :, :], capsules_b.q[None, :, :],
    )


def detect_conflict(
    pose_a: np.ndarray, pose_b: np.ndarray, skeleton: SkeletonSpec
) -> tuple[bool, list[tuple[int, int, float]]]:
    """Check one frame for capsule overlap between two agents.

    Returns (conflict, contacts) where contacts lists every overlapping
    (bone_a, bone_b, penetration_depth) with depth = r_a + r_b - distance.
    """
    caps_a = pose_to_capsules(pose_a, skeleton)
    caps_b = pose_to_capsules(pose_b, skeleton)
    dist = capsule_pair_distances(caps_a, caps_b)
    threshold = caps_a.radius[:, None] + caps_b.radius[None, :]
    depth = threshold - dist
    ia, ib = np.nonzero(depth > 0)
    contacts = [(int(i), int(j), float(depth[i, j])) for i, j in zip(ia, ib)]
    return bool(contacts), contacts


def _bone_segments(frames: np.ndarray, skeleton: SkeletonSpec) -> tuple[np.ndarray, np.ndarray]:
    bones = np.asarray(skeleton.bones)
    return frames[:, bones[:, 0], :], frames[:, bones[:, 1], :]


def sequence_penetration(
    frames_a: np.ndarray,
    frames_b: np.ndarray,
    skeleton: SkeletonSpec,
    prune_distance: float | None = None,
) -> np.ndarray:
    """Per-frame maximum penetration depth between two agents.

    `frames_*` are (L, J, 3); the result is (L,), <= 0 where the frame is
    conflict-free. With `prune_distance` set, frames whose root joints are
    farther apart than it are skipped (depth reported as -inf), which is
    sound whenever prune_distance exceeds both skeletons' reach.
    """
    frames_a = np.asarray(frames_a, dtype=float)
    frames_b = np.asarray(frames_b, dtype=float)
    n = frames_a.shape[0]
    depth = np.full(n, -np.inf)
    active = np.arange(n)
    if prune_distance is not None:
        root_gap = np.linalg.norm(
            frames_a[:, skeleton.root_index] - frames_b[:, skeleton.root_index], axis=-1
        )
        active = np.nonzero(root_gap <= prune_distance)[0]
        if active.size == 0:
            return depth
    pa0, pa1 = _bone_segments(frames_a[active], skeleton)
    pb0, pb1 = _bone_segments(frames_b[active], skeleton)
    dist = segment_segment_distance(
        pa0[:, :, None, :], pa1[:, :, None, :],
        pb0[:, None, :, :], pb1[:, None, :, :],
    )
    threshold = skeleton.capsule_radius[:, None] + skeleton.capsule_radius[None, :]
    depth[active] = (threshold[None] - dist).max(axis=(1, 2))
    return depth


def skeleton_reach(skeleton: SkeletonSpec, frames: np.ndarray) -> float:
    """Largest root-to-joint distance observed, plus the fattest capsule."""
    gaps = np.linalg.norm(
        frames - frames[:, skeleton.root_index : skeleton.root_index + 1], axis=-1
    )
    return float(gaps.max() + skeleton.capsule_radius.max())


def detect_conflicts_sequence(
    frames_a: np.ndarray, frames_b: np.ndarray, skeleton: SkeletonSpec
) -> np.ndarray:
    """Boolean per-frame conflict mask over two (L, J, 3) sequences."""
    reach_a = skeleton_reach(skeleton, frames_a)
    reach_b = skeleton_reach(skeleton, frames_b)
    depth = sequence_penetration(
        frames_a, frames_b, skeleton, prune_distance=reach_a + reach_b
    )
    return depth > 0
