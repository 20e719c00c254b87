"""Kinematic synchronization of the follower: conflict-gated collision
separation plus gradient correction under a hinge joint-distance loss and a
velocity-similarity penalty. Leader channels are never written.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .collision import detect_conflicts_sequence, sequence_penetration
from .diffusion import NoiseSchedule
from .motion import GROUND_AXES, SkeletonSpec

_SEPARATION_CAP = 2.0
_SEPARATION_TOL = 1e-4
_FALLBACK_DIRECTION = np.array([1.0, 0.0])  # roots coincide horizontally


@dataclass(frozen=True)
class AdapterConfig:
    """Adapter settings: hinge margin delta (m), loss weights, how many (or
    exactly which) denoising steps the adapter fires at, and the gradient
    phase's step size / iteration count. vel_epsilon floors velocity norms
    in the cosine term; vel_loss_form 'dot' keeps the unnormalized product."""

    delta: float = 0.10
    w_joint: float = 1.0
    w_vel: float = 0.1
    adapter_steps: int | tuple[int, ...] = 3
    grad_step_size: float = 0.1
    grad_iters: int = 5
    vel_epsilon: float = 1e-6
    vel_loss_form: str = "cosine"

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.w_joint < 0 or self.w_vel < 0:
            raise ValueError("loss weights must be >= 0")
        if isinstance(self.adapter_steps, int):
            if self.adapter_steps < 1:
                raise ValueError(f"adapter_steps must be >= 1, got {self.adapter_steps}")
        else:
            steps = tuple(int(t) for t in self.adapter_steps)
            if not steps:
                raise ValueError("explicit adapter_steps may not be empty")
            object.__setattr__(self, "adapter_steps", steps)
        if self.grad_step_size <= 0 or self.grad_iters < 0:
            raise ValueError("grad_step_size must be positive, grad_iters >= 0")
        if self.vel_epsilon <= 0:
            raise ValueError(f"vel_epsilon must be positive, got {self.vel_epsilon}")
        if self.vel_loss_form not in ("cosine", "dot"):
            raise ValueError(f"vel_loss_form must be 'cosine' or 'dot', got {self.vel_loss_form!r}")


def joint_loss(seq_a: np.ndarray, seq_b: np.ndarray, delta: float) -> float:
    """Sum over frames and joints of max(0, delta - |pa - pb|)^2."""
    seq_a = np.asarray(seq_a, dtype=float)
    seq_b = np.asarray(seq_b, dtype=float)
    if seq_a.shape != seq_b.shape:
        raise ValueError(f"sequences disagree on shape: {seq_a.shape} vs {seq_b.shape}")
    d = np.linalg.norm(seq_a - seq_b, axis=-1)
    hinge = np.maximum(0.0, delta - d)
    return float(np.sum(hinge**2))


def joint_loss_grad(seq_a: np.ndarray, seq_b: np.ndarray, delta: float) -> np.ndarray:
    """Analytic gradient of joint_loss w.r.t. seq_b. Coincident joint pairs
    (distance exactly 0) have no defined direction and contribute 0."""
    seq_a = np.asarray(seq_a, dtype=float)
    seq_b = np.asarray(seq_b, dtype=float)
    diff = seq_b - seq_a
    d = np.linalg.norm(diff, axis=-1)
    active = (d > 0.0) & (d < delta)
    coef = np.where(active, -2.0 * (delta - d) / np.where(d > 0.0, d, 1.0), 0.0)
    return coef[..., None] * diff


def _velocities(seq: np.ndarray) -> np.ndarray:
    return seq[1:] - seq[:-1]


def velocity_loss(
    seq_a: np.ndarray,
    seq_b: np.ndarray,
    vel_epsilon: float = 1e-6,
    form: str = "cosine",
) -> float:
    """Summed per-joint velocity similarity between the two sequences.

    'cosine' (default) sums cos(v_a, v_b) over frame gaps and joints, with
    terms where either norm falls below vel_epsilon contributing 0; 'dot'
    sums the raw products. Minimizing drives the follower's velocities away
    from the leader's.
    """
    seq_a = np.asarray(seq_a, dtype=float)
    seq_b = np.asarray(seq_b, dtype=float)
    if seq_a.shape != seq_b.shape:
        raise ValueError(f"sequences disagree on shape: {seq_a.shape} vs {seq_b.shape}")
    if seq_a.shape[0] < 2:
        raise ValueError("need at least 2 frames for velocities")
    va, vb = _velocities(seq_a), _velocities(seq_b)
    dots = np.sum(va * vb, axis=-1)
    if form == "dot":
        return float(np.sum(dots))
    if form != "cosine":
        raise ValueError(f"form must be 'cosine' or 'dot', got {form!r}")
    na = np.linalg.norm(va, axis=-1)
    nb = np.linalg.norm(vb, axis=-1)
    live = (na >= vel_epsilon) & (nb >= vel_epsilon)
    denom = np.where(live, na * nb, 1.0)
    return float(np.sum(np.where(live, dots / denom, 0.0)))


def velocity_loss_grad(
    seq_a: np.ndarray,
    seq_b: np.ndarray,
    vel_epsilon: float = 1e-6,
    form: str = "cosine",
) -> np.ndarray:
    """Analytic gradient of velocity_loss w.r.t. seq_b positions, chained
    through the forward differences. Epsilon-floored terms contribute 0."""
    seq_a = np.asarray(seq_a, dtype=float)
    seq_b = np.asarray(seq_b, dtype=float)
    va, vb = _velocities(seq_a), _velocities(seq_b)
    if form == "dot":
        dvb = va
    elif form == "cosine":
        na = np.linalg.norm(va, axis=-1)
        nb = np.linalg.norm(vb, axis=-1)
        live = (na >= vel_epsilon) & (nb >= vel_epsilon)
        na_s = np.where(live, na, 1.0)
        nb_s = np.where(live, nb, 1.0)
        cos = np.sum(va * vb, axis=-1) / (na_s * nb_s)
        dvb = va / (na_s * nb_s)[..., None] - (cos / nb_s**2)[..., None] * vb
        dvb = np.where(live[..., None], dvb, 0.0)
    else:
        raise ValueError(f"form must be 'cosine' or 'dot', got {form!r}")
    grad = np.zeros_like(seq_b)
    grad[1:] += dvb
    grad[:-1] -= dvb
    return grad


def _normalize_conflicts(frame_conflicts, n_frames: int) -> np.ndarray:
    """Accept a boolean mask or a per-frame contact-list sequence."""
    if isinstance(frame_conflicts, np.ndarray) and frame_conflicts.dtype == bool:
        mask = frame_conflicts
        if mask.shape != (n_frames,):
            raise ValueError(f"conflict mask must be ({n_frames},), got {mask.shape}")
        return mask
    mask = np.zeros(n_frames, dtype=bool)
    for f, contacts in enumerate(frame_conflicts):
        mask[f] = bool(contacts)
    return mask


def separate_collision(
    seq_b: np.ndarray,
    seq_a: np.ndarray,
    skeleton: SkeletonSpec,
    frame_conflicts,
) -> tuple[np.ndarray, list[int]]:
    """Rigidly translate the follower's colliding frames until they clear.

    Each conflicting frame moves along the horizontal root-to-root direction
    (away from the leader; +x when the roots coincide) by the smallest
    displacement, bisected to 1e-4 m, that removes every capsule overlap.
    Frames that stay overlapped at the 2 m cap are returned as unresolved
    and left untouched for the gradient phase. Non-conflicting frames pass
    through bit-identically.
    """
    seq_a = np.asarray(seq_a, dtype=float)
    seq_b = np.asarray(seq_b, dtype=float)
    mask = _normalize_conflicts(frame_conflicts, seq_b.shape[0])
    frames = np.nonzero(mask)[0]
    if frames.size == 0:
        return seq_b.copy(), []

    root = skeleton.root_index
    gap = seq_b[frames, root] - seq_a[frames, root]
    planar = gap[:, list(GROUND_AXES)]
    norms = np.linalg.norm(planar, axis=-1)
    planar = np.where(
        norms[:, None] > 1e-9, planar / np.where(norms[:, None] > 1e-9, norms[:, None], 1.0),
        _FALLBACK_DIRECTION,
    )
    directions = np.zeros((frames.size, 3))
    directions[:, list(GROUND_AXES)] = planar

    def max_depth(displacement: np.ndarray) -> np.ndarray:
        moved = seq_b[frames] + displacement[:, None, None] * directions[:, None, :]
        return sequence_penetration(seq_a[frames], moved, skeleton)

    lo = np.zeros(frames.size)
    hi = np.full(frames.size, 0.125)
    for _ in range(5):
        depth = max_depth(hi)
        stuck = depth > 0
        if not stuck.any():
            break
        lo[stuck] = hi[stuck]
        hi[stuck] = np.minimum(hi[stuck] * 2.0, _SEPARATION_CAP)
    unresolved = max_depth(hi) > 0
    solvable = ~unresolved

    while np.any((hi - lo)[solvable] > _SEPARATION_TOL):
        mid = 0.5 * (lo + hi)
        deep = max_depth(mid) > 0
        lo = np.where(solvable & deep, mid, lo)
        hi = np.where(solvable & ~deep, mid, hi)

    out = seq_b.copy()
    moved_frames = frames[solvable]
    out[moved_frames] += hi[solvable, None, None] * directions[solvable][:, None, :]
    return out, [int(f) for f in frames[unresolved]]


def combined_loss(
    seq_a: np.ndarray, seq_b: np.ndarray, config: AdapterConfig
) -> float:
    """w_joint * joint_loss + w_vel * velocity_loss."""
    total = config.w_joint * joint_loss(seq_a, seq_b, config.delta)
    if config.w_vel > 0:
        total += config.w_vel * velocity_loss(
            seq_a, seq_b, config.vel_epsilon, config.vel_loss_form
        )
    return total


def adapt_follower(
    x0_pred: np.ndarray,
    skeleton: SkeletonSpec,
    config: AdapterConfig,
    follower: int = 1,
) -> np.ndarray:
    """Conflict-gated follower correction on a (2, L, J, 3) prediction.

    With no conflicting frame the input is returned untouched. Otherwise the
    follower is first rigidly separated out of collisions, then descended
    for grad_iters steps on the combined loss; a backtracking line search
    (at most 5 halvings, iteration skipped if all fail) keeps every accepted
    step from increasing the loss. The leader's channels are never written.
    """
    x = np.asarray(x0_pred, dtype=float)
    if x.ndim != 4 or x.shape[0] != 2:
        raise ValueError(f"expected (2, L, J, 3) tensor, got {x.shape}")
    if follower not in (0, 1):
        raise ValueError(f"follower must be 0 or 1, got {follower}")
    leader = 1 - follower
    mask = detect_conflicts_sequence(x[leader], x[follower], skeleton)
    if not mask.any():
        return x0_pred

    seq_a = x[leader]
    seq_b, _ = separate_collision(x[follower], seq_a, skeleton, mask)

    for _ in range(config.grad_iters):
        grad = config.w_joint * joint_loss_grad(seq_a, seq_b, config.delta)
        if config.w_vel > 0:
            grad = grad + config.w_vel * velocity_loss_grad(
                seq_a, seq_b, config.vel_epsilon, config.vel_loss_form
            )
        before = combined_loss(seq_a, seq_b, config)
        step = config.grad_step_size
        for _ in range(6):  # initial step plus up to 5 halvings
            candidate = seq_b - step * grad
            if combined_loss(seq_a, candidate, config) <= before:
                seq_b = candidate
                break
            step *= 0.5

    out = x.copy()
    out[follower] = seq_b
    return out


class AdapterHook:
    """post_predict hook firing adapt_follower at a fixed set of steps;
    identity everywhere else. Fired steps are recorded in .invocations."""

    def __init__(
        self,
        config: AdapterConfig,
        skeleton: SkeletonSpec,
        fire_steps: Sequence[int],
        follower: int = 1,
    ):
        self.config = config
        self.skeleton = skeleton
        self.fire_steps = frozenset(int(t) for t in fire_steps)
        self.follower = follower
        self.invocations: list[int] = []

    def post_predict(self, x0_pred: np.ndarray, t: int) -> np.ndarray:
        if t not in self.fire_steps:
            return x0_pred
        self.invocations.append(t)
        return adapt_follower(x0_pred, self.skeleton, self.config, self.follower)


def adapter_hook(
    config: AdapterConfig,
    skeleton: SkeletonSpec,
    schedule: NoiseSchedule,
    step_subsequence: Sequence[int],
    window,
    follower: int = 1,
) -> AdapterHook:
    """Build the adapter's post_predict hook for a sampling run.

    An integer adapter_steps places that many firing steps evenly over the
    traversed steps inside the guidance window (all of them when fewer are
    traversed); an explicit tuple is used verbatim.
    """
    from .pace import in_window  # placement shares the controller's window rule

    if isinstance(config.adapter_steps, int):
        visited = [
            int(t) for t in step_subsequence[:-1] if in_window(int(t), schedule.T, window)
        ]
        if not visited:
            fire: list[int] = []
        elif len(visited) <= config.adapter_steps:
            fire = visited
        else:
            idx = np.unique(
                np.round(np.linspace(0, len(visited) - 1, config.adapter_steps)).astype(int)
            )
            fire = [visited[i] for i in idx]
    else:
        fire = list(config.adapter_steps)
    return AdapterHook(config, skeleton, fire, follower)
