import numpy as np
import pytest

from duetgen import SkeletonSpec, default_skeleton, detect_conflict, pose_to_capsules
from duetgen.collision import (
    CapsuleSet,
    capsule_pair_distances,
    detect_conflicts_sequence,
    segment_segment_distance,
    sequence_penetration,
)


def sampled_segment_distance(p0, p1, q0, q1, samples=4096):
    """Brute-force oracle: densely sample one segment, project each sample
    onto the other exactly, take the minimum."""
    ts = np.linspace(0.0, 1.0, samples)
    points = p0 + ts[:, None] * (p1 - p0)
    d = q1 - q0
    dd = float(np.dot(d, d))
    if dd < 1e-15:
        return float(np.min(np.linalg.norm(points - q0, axis=1)))
    proj = np.clip((points - q0) @ d / dd, 0.0, 1.0)
    closest = q0 + proj[:, None] * d
    return float(np.min(np.linalg.norm(points - closest, axis=1)))


class TestSegmentDistance:
    def test_parallel_segments(self):
        d = segment_segment_distance([0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0])
        assert np.isclose(d, 1.0)

    def test_crossing_segments(self):
        d = segment_segment_distance([-1, 0, 0], [1, 0, 0], [0, -1, 1], [0, 1, 1])
        assert np.isclose(d, 1.0)

    def test_degenerate_both_points(self):
        d = segment_segment_distance([0, 0, 0], [0, 0, 0], [3, 4, 0], [3, 4, 0])
        assert np.isclose(d, 5.0)

    def test_degenerate_one_point(self):
        d = segment_segment_distance([0, 0, 0.5], [0, 0, 0.5], [-1, 0, 0], [1, 0, 0])
        assert np.isclose(d, 0.5)

    def test_random_cases_match_sampling_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            p0, p1, q0, q1 = rng.standard_normal((4, 3))
            exact = segment_segment_distance(p0, p1, q0, q1)
            sampled = sampled_segment_distance(p0, p1, q0, q1)
            # the sampled minimum can only overestimate, by at most the
            # sampling resolution of segment P
            assert sampled >= exact - 1e-9
            assert sampled - exact < np.linalg.norm(p1 - p0) / 4000

    def test_broadcasts(self):
        rng = np.random.default_rng(1)
        p0 = rng.standard_normal((5, 1, 3))
        p1 = p0 + rng.standard_normal((5, 1, 3))
        q0 = rng.standard_normal((1, 7, 3))
        q1 = q0 + rng.standard_normal((1, 7, 3))
        batch = segment_segment_distance(p0, p1, q0, q1)
        assert batch.shape == (5, 7)
        one = segment_segment_distance(p0[2, 0], p1[2, 0], q0[0, 3], q1[0, 3])
        assert np.isclose(batch[2, 3], one)


class TestPoseToCapsules:
    def test_one_capsule_per_bone(self):
        sk = default_skeleton()
        pose = np.random.default_rng(2).standard_normal((22, 3))
        caps = pose_to_capsules(pose, sk)
        assert len(caps) == 21

    def test_endpoints_match_joints(self, tiny_skeleton):
        pose = np.random.default_rng(3).standard_normal((4, 3))
        caps = pose_to_capsules(pose, tiny_skeleton)
        for (parent, child), (p, q, r) in zip(tiny_skeleton.bones, caps.capsules):
            assert np.array_equal(p, pose[parent])
            assert np.array_equal(q, pose[child])
            assert r == 0.05

    def test_degenerate_bone_is_sphere(self):
        sk = SkeletonSpec(joint_count=2, bones=((0, 1),), capsule_radius=0.1)
        pose = np.zeros((2, 3))  # coincident joints
        caps = pose_to_capsules(pose, sk)
        other = CapsuleSet(np.array([[0.15, 0, 0]]), np.array([[0.3, 0, 0]]), np.array([0.1]))
        d = capsule_pair_distances(caps, other)
        assert np.isclose(d[0, 0], 0.15)

    def test_joint_count_mismatch(self, tiny_skeleton):
        with pytest.raises(ValueError, match="shape"):
            pose_to_capsules(np.zeros((5, 3)), tiny_skeleton)


class TestDetectConflict:
    def test_far_apart_no_conflict(self):
        sk = default_skeleton()
        pose = np.random.default_rng(4).standard_normal((22, 3)) * 0.3
        far = pose.copy()
        far[:, 0] += 10.0
        conflict, contacts = detect_conflict(pose, far, sk)
        assert not conflict
        assert contacts == []

    def test_superimposed_identical_poses(self):
        sk = default_skeleton()
        pose = np.random.default_rng(5).standard_normal((22, 3)) * 0.3
        conflict, contacts = detect_conflict(pose, pose, sk)
        assert conflict
        aligned = {(i, i) for i in range(sk.bone_count)}
        found = {(i, j): depth for i, j, depth in contacts}
        assert aligned <= set(found)
        for i in range(sk.bone_count):
            assert np.isclose(found[(i, i)], 2 * sk.capsule_radius[i])

    def test_sequence_helpers_agree_with_per_frame(self, tiny_skeleton):
        rng = np.random.default_rng(6)
        frames_a = rng.standard_normal((12, 4, 3)) * 0.25
        frames_b = rng.standard_normal((12, 4, 3)) * 0.25
        mask = detect_conflicts_sequence(frames_a, frames_b, tiny_skeleton)
        for f in range(12):
            conflict, _ = detect_conflict(frames_a[f], frames_b[f], tiny_skeleton)
            assert mask[f] == conflict

    def test_pruning_never_drops_conflicts(self, tiny_skeleton):
        rng = np.random.default_rng(7)
        frames_a = rng.standard_normal((30, 4, 3)) * 0.4
        frames_b = rng.standard_normal((30, 4, 3)) * 0.4
        frames_b[:, :, 0] += np.linspace(0.0, 5.0, 30)[:, None]
        full = sequence_penetration(frames_a, frames_b, tiny_skeleton)
        pruned = detect_conflicts_sequence(frames_a, frames_b, tiny_skeleton)
        assert np.array_equal(full > 0, pruned)
