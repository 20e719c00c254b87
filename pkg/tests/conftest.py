import numpy as np
import pytest

from duetgen import MotionSequence, SkeletonSpec, TwoAgentMotion, make_schedule


@pytest.fixture
def tiny_skeleton() -> SkeletonSpec:
    """4-joint chain used where the full 22-joint body is overkill."""
    return SkeletonSpec(
        joint_count=4, bones=((0, 1), (1, 2), (2, 3)), capsule_radius=0.05
    )


@pytest.fixture
def schedule():
    return make_schedule(1000)


@pytest.fixture
def short_schedule():
    return make_schedule(20)


def random_motion(rng, n_frames=8, n_joints=4, fps=30.0, scale=1.0) -> MotionSequence:
    return MotionSequence(rng.standard_normal((n_frames, n_joints, 3)) * scale, fps)


def random_pair(rng, n_frames=8, n_joints=4, fps=30.0, scale=1.0) -> TwoAgentMotion:
    return TwoAgentMotion(
        random_motion(rng, n_frames, n_joints, fps, scale),
        random_motion(rng, n_frames, n_joints, fps, scale),
    )


class ZeroNoise:
    """rng stand-in whose draws are all zero; makes noising deterministic."""

    def standard_normal(self, shape):
        return np.zeros(shape)
