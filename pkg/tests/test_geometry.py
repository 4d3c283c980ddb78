"""Camera math against hand computations and brute-force matrix oracles."""

import numpy as np
import pytest

from oracles import project_by_matrix, camera_space_point, rotation_about_axis, rotation_about_z
from trackedit.errors import BehindCamera, DegenerateConfiguration, NonPositiveDepth
from trackedit.geometry import (
    CameraIntrinsics,
    DisparityScale,
    Homography,
    RigidPose,
    SimilarityTransform,
    fit_homography,
    interpolate_transform,
    matrix_from_quat,
    normalize_disparity,
    project,
    quat_from_matrix,
    slerp,
    unproject,
)


def random_pose(rng):
    rot = rotation_about_axis(rng.normal(size=3), rng.uniform(0, np.pi))
    return RigidPose(rot, rng.normal(scale=0.5, size=3))


class TestProject:
    def test_optical_axis_point(self):
        intr = CameraIntrinsics(1, 1, 0, 0, 8, 8)
        assert project((0, 0, 1), intr, RigidPose.identity()) == (0.0, 0.0, 1.0)

    def test_hand_expansion(self):
        intr = CameraIntrinsics(100, 100, 50, 50, 128, 128)
        x, y, d = project((1, 0, 2), intr, RigidPose.identity())
        assert (x, y, d) == (100.0, 50.0, 2.0)

    def test_matches_matrix_oracle(self, rng):
        intr = CameraIntrinsics(87.0, 92.0, 31.0, 27.5, 64, 64)
        for _ in range(50):
            pose = random_pose(rng)
            p = pose.inverse().apply(rng.uniform([-1, -1, 1.0], [1, 1, 6.0]))
            x, y, d = project(p, intr, pose)
            ox, oy, od = project_by_matrix(p, intr, pose)
            assert abs(x - ox) < 1e-12 and abs(y - oy) < 1e-12 and abs(d - od) < 1e-12

    def test_behind_camera_raises(self):
        intr = CameraIntrinsics(1, 1, 0, 0, 8, 8)
        with pytest.raises(BehindCamera):
            project((0, 0, -1), intr, RigidPose.identity())
        with pytest.raises(BehindCamera):
            project((0, 0, 0), intr, RigidPose.identity())

    def test_offscreen_is_legal(self):
        intr = CameraIntrinsics(10, 10, 4, 4, 8, 8)
        x, _, _ = project((100, 0, 1), intr, RigidPose.identity())
        assert x > 8  # far outside the frame, no error


class TestUnproject:
    def test_identity_camera(self):
        intr = CameraIntrinsics(1, 1, 0, 0, 8, 8)
        assert np.allclose(unproject(0, 0, 1, intr, RigidPose.identity()), (0, 0, 1))

    def test_round_trip_1000_random(self, rng):
        intr = CameraIntrinsics(55.0, 60.0, 32.0, 24.0, 64, 48)
        for _ in range(1000):
            pose = random_pose(rng)
            x, y = rng.uniform(-20, 80), rng.uniform(-20, 60)
            depth = rng.uniform(0.1, 50.0)
            p = unproject(x, y, depth, intr, pose)
            x2, y2, d2 = project(p, intr, pose)
            assert abs(x2 - x) <= 1e-9 * max(1, abs(x))
            assert abs(y2 - y) <= 1e-9 * max(1, abs(y))
            assert abs(d2 - depth) <= 1e-9 * depth

    def test_rotated_pose_matches_matrix_oracle(self, rng):
        intr = CameraIntrinsics(40.0, 40.0, 16.0, 12.0, 32, 24)
        pose = random_pose(rng)
        x, y, depth = 10.0, 14.0, 3.0
        p = unproject(x, y, depth, intr, pose)
        # oracle: camera-space point by hand, then inverse rigid map
        p_cam = np.array([depth * (x - intr.cx) / intr.fx, depth * (y - intr.cy) / intr.fy, depth])
        expected = pose.rotation.T @ (p_cam - pose.translation)
        assert np.allclose(p, expected, atol=1e-12)
        assert np.allclose(camera_space_point(p, pose), p_cam, atol=1e-12)

    def test_nonpositive_depth(self):
        intr = CameraIntrinsics(1, 1, 0, 0, 8, 8)
        with pytest.raises(NonPositiveDepth):
            unproject(0, 0, 0.0, intr, RigidPose.identity())


class TestDisparity:
    def test_hand_evaluated_example(self):
        z = normalize_disparity([1.0, 2.0, 4.0])
        assert np.allclose(z, [1.0, 1.0 / 3.0, 0.0], atol=1e-12)

    def test_all_equal_depths_map_to_center(self):
        assert np.all(normalize_disparity([3.0, 3.0, 3.0]) == 0.5)

    def test_range_always_unit_interval(self, rng):
        for _ in range(25):
            depths = rng.uniform(0.05, 100.0, size=rng.integers(2, 400))
            z = normalize_disparity(depths)
            assert z.min() >= 0.0 and z.max() <= 1.0

    def test_monotone_nearer_is_larger(self, rng):
        depths = rng.uniform(0.2, 30.0, size=200)
        z = normalize_disparity(depths)
        order = np.argsort(depths)
        assert np.all(np.diff(z[order]) <= 1e-15)

    def test_scale_rejects_nonpositive(self):
        with pytest.raises(NonPositiveDepth):
            DisparityScale.from_depths(np.array([1.0, -2.0]))


class TestHomography:
    def test_identity_quad(self):
        quad = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        h = fit_homography(quad, quad)
        assert np.allclose(h.matrix, np.eye(3), atol=1e-9)

    def test_pure_translation(self):
        src = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        h = fit_homography(src, src + [5.0, 0.0])
        expected = np.array([[1, 0, 5], [0, 1, 0], [0, 0, 1.0]])
        assert np.allclose(h.matrix, expected, atol=1e-9)

    def test_random_quads_residual(self, rng):
        fitted = 0
        for _ in range(50):
            src = rng.uniform(0, 100, size=(4, 2))
            dst = rng.uniform(0, 100, size=(4, 2))
            try:
                h = fit_homography(src, dst)
            except DegenerateConfiguration:
                continue  # rare near-collinear draws
            assert np.abs(h.apply(src) - dst).max() < 1e-8
            fitted += 1
        assert fitted > 40

    def test_collinear_sources_degenerate(self):
        src = np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]])
        dst = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])
        with pytest.raises(DegenerateConfiguration):
            fit_homography(src, dst)

    def test_normalized_bottom_right(self, rng):
        src = rng.uniform(0, 10, size=(4, 2))
        dst = src * 1.5 + [2.0, -1.0]
        h = fit_homography(src, dst)
        assert h.matrix[2, 2] == 1.0


class TestInterpolateTransform:
    def test_endpoints_bit_identical(self):
        a = SimilarityTransform(2.0, rotation_about_z(0.3), np.array([1.0, 2.0, 3.0]))
        b = SimilarityTransform(0.5, rotation_about_z(-0.4), np.array([-1.0, 0.0, 5.0]))
        at = interpolate_transform(a, 0, b, 10, 0)
        bt = interpolate_transform(a, 0, b, 10, 10)
        assert at is a and bt is b

    def test_translation_midpoint(self):
        a = SimilarityTransform.identity()
        b = SimilarityTransform(1.0, np.eye(3), np.array([2.0, 0.0, 0.0]))
        mid = interpolate_transform(a, 0, b, 10, 5)
        assert np.allclose(mid.translation, [1.0, 0.0, 0.0]) and mid.scale == 1.0

    def test_rotation_midpoint_axis_angle_oracle(self):
        a = SimilarityTransform.identity()
        b = SimilarityTransform(1.0, rotation_about_z(np.pi / 2), np.zeros(3))
        mid = interpolate_transform(a, 0, b, 2, 1)
        assert np.allclose(mid.rotation, rotation_about_z(np.pi / 4), atol=1e-12)

    def test_log_scale_interpolation(self):
        a = SimilarityTransform(1.0, np.eye(3), np.zeros(3))
        b = SimilarityTransform(4.0, np.eye(3), np.zeros(3))
        mid = interpolate_transform(a, 0, b, 2, 1)
        assert np.isclose(mid.scale, 2.0)  # geometric, not arithmetic, mean

    def test_slerp_shortest_arc(self):
        qa = quat_from_matrix(rotation_about_z(0.1))
        qb = quat_from_matrix(rotation_about_z(-0.1))
        mid = matrix_from_quat(slerp(qa, -qb, 0.5))  # sign flip must not detour
        assert np.allclose(mid, np.eye(3), atol=1e-12)


class TestRigidPoseInvariants:
    def test_compose_invert_chain_stays_orthonormal(self, rng):
        pose = RigidPose.identity()
        for _ in range(60):
            pose = pose.compose(random_pose(rng))
        r = pose.rotation
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(r) - 1) < 1e-9
        inv = pose.inverse()
        assert np.abs(pose.compose(inv).rotation - np.eye(3)).max() < 1e-9
        assert np.abs(pose.compose(inv).translation).max() < 1e-8

    def test_invalid_rotation_rejected(self):
        with pytest.raises(ValueError):
            RigidPose(np.eye(3) * 2.0, np.zeros(3))

    def test_homography_requires_invertible(self):
        with pytest.raises(DegenerateConfiguration):
            Homography(np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0.0]]))
