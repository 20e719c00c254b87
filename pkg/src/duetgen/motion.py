"""Domain types for skeletal motion: skeletons, sequences, two-agent pairs,
ground-plane trajectories, and their file formats.

Conventions: positions are meters, axis 1 is vertical, axes (0, 2) span the
ground plane. A motion is an (L, J, 3) array of joint positions at a fixed
framerate; a two-agent motion is an ordered (leader, follower) pair sharing
L, fps and skeleton.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GROUND_AXES = (0, 2)
VERTICAL_AXIS = 1

MOTION_FORMAT = "duetgen-motion"
MOTION_FORMAT_VERSION = 1

#: Registered interaction categories; one-hot condition embeddings index into
#: this tuple.
CONDITION_CATEGORIES = ("circle-duet", "approach-collide", "mirror-walk", "orbit")


class MotionFileError(ValueError):
    """Raised when a motion or trajectory file cannot be parsed; the message
    names the offending field."""


JOINT_NAMES = (
    "pelvis", "spine1", "spine2", "spine3", "neck", "head",
    "l_collar", "l_shoulder", "l_elbow", "l_wrist",
    "r_collar", "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle", "l_foot",
    "r_hip", "r_knee", "r_ankle", "r_foot",
)

_CANONICAL_BONES = (
    (0, 1), (1, 2), (2, 3), (3, 4), (4, 5),
    (3, 6), (6, 7), (7, 8), (8, 9),
    (3, 10), (10, 11), (11, 12), (12, 13),
    (0, 14), (14, 15), (15, 16), (16, 17),
    (0, 18), (18, 19), (19, 20), (20, 21),
)


@dataclass(frozen=True)
class SkeletonSpec:
    """Fixed skeleton topology: a joint tree plus one collision capsule
    radius per bone."""

    joint_count: int = 22
    bones: tuple[tuple[int, int], ...] = _CANONICAL_BONES
    capsule_radius: np.ndarray = field(
        default_factory=lambda: np.full(len(_CANONICAL_BONES), 0.06)
    )
    root_index: int = 0

    def __post_init__(self):
        if self.joint_count < 2:
            raise ValueError(f"joint_count must be >= 2, got {self.joint_count}")
        bones = tuple((int(p), int(c)) for p, c in self.bones)
        object.__setattr__(self, "bones", bones)
        radius = np.atleast_1d(np.asarray(self.capsule_radius, dtype=float))
        if radius.size == 1:
            radius = np.full(len(bones), float(radius[0]))
        object.__setattr__(self, "capsule_radius", radius)
        if radius.shape != (len(bones),):
            raise ValueError(
                f"capsule_radius must have one entry per bone "
                f"({len(bones)}), got shape {radius.shape}"
            )
        if np.any(radius <= 0):
            raise ValueError("capsule radii must be positive")
        if not 0 <= self.root_index < self.joint_count:
            raise ValueError(f"root_index {self.root_index} out of range")
        self._check_tree()

    def _check_tree(self):
        # A tree over all joints rooted at root_index: J-1 edges, every
        # non-root joint reached exactly once walking child links.
        if len(self.bones) != self.joint_count - 1:
            raise ValueError(
                f"bones must form a tree: expected {self.joint_count - 1} "
                f"edges for {self.joint_count} joints, got {len(self.bones)}"
            )
        children: dict[int, list[int]] = {}
        for parent, child in self.bones:
            if not (0 <= parent < self.joint_count and 0 <= child < self.joint_count):
                raise ValueError(f"bone ({parent}, {child}) references unknown joint")
            children.setdefault(parent, []).append(child)
        seen = {self.root_index}
        stack = [self.root_index]
        while stack:
            for child in children.get(stack.pop(), ()):
                if child in seen:
                    raise ValueError(f"joint {child} reached twice; bones are not a tree")
                seen.add(child)
                stack.append(child)
        if len(seen) != self.joint_count:
            missing = sorted(set(range(self.joint_count)) - seen)
            raise ValueError(f"joints {missing} not connected to root {self.root_index}")

    @property
    def bone_count(self) -> int:
        return len(self.bones)


def default_skeleton() -> SkeletonSpec:
    """Canonical 22-joint skeleton (pelvis-rooted, 21 bones, 6 cm capsules)."""
    return SkeletonSpec()


@dataclass(frozen=True)
class MotionSequence:
    """One agent's motion: an (L, J, 3) position array at `fps` frames/s."""

    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ValueError(f"frames must have shape (L, J, 3), got {frames.shape}")
        if frames.shape[0] < 2:
            raise ValueError(f"motion needs at least 2 frames, got {frames.shape[0]}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class TwoAgentMotion:
    """Ordered (leader, follower) pair of motions sharing length, fps and
    joint count."""

    agent_a: MotionSequence
    agent_b: MotionSequence

    def __post_init__(self):
        a, b = self.agent_a, self.agent_b
        if a.length != b.length:
            raise ValueError(f"agents disagree on length: {a.length} vs {b.length}")
        if a.joint_count != b.joint_count:
            raise ValueError(
                f"agents disagree on joint count: {a.joint_count} vs {b.joint_count}"
            )
        if a.fps != b.fps:
            raise ValueError(f"agents disagree on fps: {a.fps} vs {b.fps}")

    @property
    def length(self) -> int:
        return self.agent_a.length

    @property
    def joint_count(self) -> int:
        return self.agent_a.joint_count

    @property
    def fps(self) -> float:
        return self.agent_a.fps

    def as_tensor(self) -> np.ndarray:
        """Stack both agents into a (2, L, J, 3) tensor."""
        return np.stack([self.agent_a.frames, self.agent_b.frames])

    @classmethod
    def from_tensor(cls, x: np.ndarray, fps: float = 30.0) -> "TwoAgentMotion":
        x = np.asarray(x, dtype=float)
        if x.ndim != 4 or x.shape[0] != 2 or x.shape[3] != 3:
            raise ValueError(f"expected tensor of shape (2, L, J, 3), got {x.shape}")
        return cls(MotionSequence(x[0], fps), MotionSequence(x[1], fps))


@dataclass(frozen=True)
class Trajectory:
    """Per-frame root positions on the ground plane: an (L, 2) array of
    (x, z) meters, or (L, 3) of (x, y, z) when a height channel is kept."""

    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or points.shape[1] not in (2, 3):
            raise ValueError(f"points must have shape (L, 2) or (L, 3), got {points.shape}")
        if points.shape[0] < 2:
            raise ValueError(f"trajectory needs at least 2 points, got {points.shape[0]}")
        if not np.all(np.isfinite(points)):
            raise ValueError("trajectory contains non-finite values")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def length(self) -> int:
        return self.points.shape[0]

    @property
    def has_height(self) -> bool:
        return self.points.shape[1] == 3

    @property
    def planar(self) -> np.ndarray:
        """(L, 2) ground-plane coordinates, dropping any height channel."""
        if self.has_height:
            return self.points[:, [0, 2]]
        return self.points


@dataclass(frozen=True)
class ConditionLabel:
    """Categorical stand-in for a text condition: a registered interaction
    category with a one-hot embedding."""

    category: str

    def __post_init__(self):
        if self.category not in CONDITION_CATEGORIES:
            raise ValueError(
                f"unknown condition category {self.category!r}; "
                f"registered: {CONDITION_CATEGORIES}"
            )

    @property
    def index(self) -> int:
        return CONDITION_CATEGORIES.index(self.category)

    @property
    def embedding(self) -> np.ndarray:
        onehot = np.zeros(len(CONDITION_CATEGORIES))
        onehot[self.index] = 1.0
        return onehot


def project_root_trajectory(motion: MotionSequence, skeleton: SkeletonSpec) -> Trajectory:
    """Project the root joint onto the ground plane, one point per frame."""
    if motion.joint_count != skeleton.joint_count:
        raise ValueError(
            f"motion has {motion.joint_count} joints, skeleton expects "
            f"{skeleton.joint_count}"
        )
    return Trajectory(motion.frames[:, skeleton.root_index, list(GROUND_AXES)])


def swap_agents(x: TwoAgentMotion) -> TwoAgentMotion:
    """Exchange leader and follower. An involution: swap(swap(x)) == x."""
    return TwoAgentMotion(x.agent_b, x.agent_a)


def save_motion(x: TwoAgentMotion, path) -> None:
    """Write a two-agent motion as self-describing JSON. Floats are emitted
    at full precision so load_motion round-trips exactly."""
    doc = {
        "format": MOTION_FORMAT,
        "version": MOTION_FORMAT_VERSION,
        "fps": x.fps,
        "joint_count": x.joint_count,
        "agents": [
            {"frames": x.agent_a.frames.tolist()},
            {"frames": x.agent_b.frames.tolist()},
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_motion(path) -> TwoAgentMotion:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MotionFileError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MotionFileError(f"{path}: top-level value must be an object")
    if doc.get("format") != MOTION_FORMAT:
        raise MotionFileError(f"{path}: field 'format' is not {MOTION_FORMAT!r}")
    if doc.get("version") != MOTION_FORMAT_VERSION:
        raise MotionFileError(
            f"{path}: field 'version' is {doc.get('version')!r}, "
            f"expected {MOTION_FORMAT_VERSION}"
        )
    for key in ("fps", "joint_count", "agents"):
        if key not in doc:
            raise MotionFileError(f"{path}: missing field {key!r}")
    agents = doc["agents"]
    if not isinstance(agents, list) or len(agents) != 2:
        raise MotionFileError(f"{path}: field 'agents' must list exactly 2 agents")
    sequences = []
    for i, agent in enumerate(agents):
        if not isinstance(agent, dict) or "frames" not in agent:
            raise MotionFileError(f"{path}: field 'agents[{i}].frames' missing")
        try:
            frames = np.asarray(agent["frames"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise MotionFileError(f"{path}: field 'agents[{i}].frames' is not numeric") from exc
        try:
            sequences.append(MotionSequence(frames, fps=float(doc["fps"])))
        except ValueError as exc:
            raise MotionFileError(f"{path}: field 'agents[{i}].frames' invalid: {exc}") from exc
        if frames.shape[1] != doc["joint_count"]:
            raise MotionFileError(
                f"{path}: field 'agents[{i}].frames' has {frames.shape[1]} joints, "
                f"header says {doc['joint_count']}"
            )
    return TwoAgentMotion(*sequences)


def save_trajectory(trajectory: Trajectory, path, fps: float = 30.0) -> None:
    """Write the plain-text trajectory format: a `fps=<f> frames=<L>` header
    then one `x z` (or `x y z`) line per frame."""
    lines = [f"fps={fps!r} frames={trajectory.length}"]
    for row in trajectory.points:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path) -> tuple[Trajectory, float]:
    """Read the plain-text trajectory format; returns (trajectory, fps)."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise MotionFileError(f"{path}: empty trajectory file")
    header = dict(
        part.split("=", 1) for part in lines[0].split() if "=" in part
    )
    if "fps" not in header or "frames" not in header:
        raise MotionFileError(f"{path}: header must declare fps=<f> frames=<L>")
    try:
        fps = float(header["fps"])
        n = int(header["frames"])
    except ValueError as exc:
        raise MotionFileError(f"{path}: malformed header values: {exc}") from exc
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != n:
        raise MotionFileError(
            f"{path}: header field 'frames' says {n} rows, file has {len(body)}"
        )
    rows = []
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) not in (2, 3):
            raise MotionFileError(f"{path}: row {i} has {len(parts)} columns, expected 2 or 3")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise MotionFileError(f"{path}: row {i} is not numeric: {exc}") from exc
        if len(rows[-1]) != len(rows[0]):
            raise MotionFileError(f"{path}: row {i} changes column count")
    return Trajectory(np.asarray(rows)), fps
