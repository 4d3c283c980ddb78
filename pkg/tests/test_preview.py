"""Preview renderer: unprojection, cloud edits, z-buffer splatting."""

import numpy as np
import pytest

from conftest import simple_intrinsics
from trackedit.edits import EditSpec, apply_editspec, apply_rigid_edit
from trackedit.errors import MissingDepth
from trackedit.geometry import CameraIntrinsics, RigidPose, SimilarityTransform
from trackedit.preview import (
    ColoredPointCloud,
    apply_cloud_edit,
    render_preview,
    resolve_cloud_ops,
    splat_depth,
    splat_points,
    unproject_frame,
)
from oracles import rotation_about_axis
from trackedit.scenes import ToySceneConfig, gen_procedural_pair


def identity_camera(width=16, height=12, f=10.0):
    intr = CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)
    return intr, RigidPose.identity()


class TestUnprojectFrame:
    def test_constant_depth_planar_cloud(self, rng):
        cam = identity_camera()
        image = rng.uniform(size=(12, 16, 3))
        cloud = unproject_frame(image, np.ones((12, 16)), cam)
        assert cloud.points.shape == (12 * 16, 3)
        assert np.allclose(cloud.points[:, 2], 1.0)

    def test_point_count_is_valid_pixel_count(self, rng):
        cam = identity_camera()
        depth = np.ones((12, 16))
        depth[0, :5] = 0.0  # invalid
        cloud = unproject_frame(rng.uniform(size=(12, 16, 3)), depth, cam)
        assert cloud.points.shape[0] == 12 * 16 - 5

    def test_reprojection_reproduces_image(self, rng):
        cam = identity_camera()
        image = rng.uniform(size=(12, 16, 3))
        depth = rng.uniform(1.0, 3.0, size=(12, 16))
        cloud = unproject_frame(image, depth, cam)
        out, coverage = splat_points(cloud, cam)
        assert np.all(coverage == 1)
        assert np.abs(out - image).max() < 1e-12

    def test_labels_from_masks(self, rng):
        cam = identity_camera()
        masks = np.zeros((12, 16), dtype=np.int64)
        masks[:, 8:] = 2
        cloud = unproject_frame(rng.uniform(size=(12, 16, 3)), np.ones((12, 16)), cam, masks)
        assert set(np.unique(cloud.labels)) == {0, 2}


class TestSplatPoints:
    def test_nearer_point_wins(self):
        cam = identity_camera()
        # two points on the same ray through pixel (6, 8)
        points = np.array([[0.05, 0.05, 1.0], [0.1, 0.1, 2.0]])
        colors = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        cloud = ColoredPointCloud(points, colors, np.zeros(2, np.int64))
        out, coverage = splat_points(cloud, cam)
        row, col = 6, 8
        assert coverage[row, col] == 1
        assert np.array_equal(out[row, col], [1.0, 0.0, 0.0])

    def test_depth_tie_lower_index_wins(self):
        cam = identity_camera()
        points = np.array([[0.05, 0.05, 1.0], [0.05, 0.05, 1.0]])
        colors = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        cloud = ColoredPointCloud(points, colors, np.zeros(2, np.int64))
        out, _ = splat_points(cloud, cam)
        assert np.array_equal(out[6, 8], [1.0, 0.0, 0.0])

    def test_zbuffer_matches_min_depth(self, rng):
        cam = identity_camera()
        n = 500
        points = np.stack(
            [rng.uniform(-0.6, 0.6, n), rng.uniform(-0.5, 0.5, n), rng.uniform(1.0, 4.0, n)],
            axis=1,
        )
        cloud = ColoredPointCloud(points, rng.uniform(size=(n, 3)), np.zeros(n, np.int64))
        out, coverage = splat_points(cloud, cam)
        depth_buf = splat_depth(cloud, cam)
        intr, pose = cam
        # brute force: winning depth per covered pixel equals the minimum
        # of contributing point depths
        expected = {}
        for j in range(n):
            x = intr.fx * points[j, 0] / points[j, 2] + intr.cx
            y = intr.fy * points[j, 1] / points[j, 2] + intr.cy
            c, r = int(np.floor(x)), int(np.floor(y))
            if 0 <= c < intr.width and 0 <= r < intr.height:
                expected[(r, c)] = min(expected.get((r, c), np.inf), points[j, 2])
        for (r, c), d in expected.items():
            assert coverage[r, c] == 1
            assert abs(depth_buf[r, c] - d) < 1e-12
        assert coverage.sum() == len(expected)

    def test_checkerboard_under_rotation_matches_ray_oracle(self, rng):
        # rotate the camera; every covered pixel's color must equal the
        # color of the nearest cloud point whose projection floors to it
        intr, _ = identity_camera()
        rot = rotation_about_axis([0, 1, 0], 0.15)
        pose = RigidPose(rot, np.array([0.02, -0.01, 0.0]))
        board = np.indices((12, 16)).sum(axis=0) % 2
        image = np.stack([board, board, board], axis=-1).astype(np.float64)
        cloud = unproject_frame(image, np.full((12, 16), 2.0), identity_camera())
        out, coverage = splat_points(cloud, (intr, pose))
        xy = np.zeros((cloud.points.shape[0], 2))
        depth = np.zeros(cloud.points.shape[0])
        for j, p in enumerate(cloud.points):
            pc = rot @ p + pose.translation
            depth[j] = pc[2]
            xy[j] = [intr.fx * pc[0] / pc[2] + intr.cx, intr.fy * pc[1] / pc[2] + intr.cy]
        for r in range(12):
            for c in range(16):
                members = [
                    j
                    for j in range(len(depth))
                    if int(np.floor(xy[j, 0])) == c and int(np.floor(xy[j, 1])) == r and depth[j] > 0
                ]
                if not members:
                    assert coverage[r, c] == 0
                    continue
                best = min(members, key=lambda j: (depth[j], j))
                assert coverage[r, c] == 1
                assert np.array_equal(out[r, c], cloud.colors[best])


class TestCloudEdits:
    def test_identity_spec_unchanged(self, toy_pair):
        pair, _ = toy_pair
        spec = EditSpec.from_json({"ops": []})
        resolved = resolve_cloud_ops(pair, spec)
        cloud = unproject_frame(
            pair.source_video.frames[0], pair.depth_maps[0], pair.source_camera[0], pair.masks[0]
        )
        out = apply_cloud_edit(cloud, resolved, 0)
        assert np.array_equal(out.points, cloud.points)

    def test_translation_moves_exactly_object_points(self, toy_pair):
        pair, _ = toy_pair
        spec = EditSpec.from_json(
            {"ops": [{"kind": "rigid", "selection": {"object_id": 1},
                      "keyframes": [{"frame": 0, "t": [0.3, 0.0, 0.0]}]}]}
        )
        resolved = resolve_cloud_ops(pair, spec)
        cloud = unproject_frame(
            pair.source_video.frames[0], pair.depth_maps[0], pair.source_camera[0], pair.masks[0]
        )
        out = apply_cloud_edit(cloud, resolved, 0)
        sel = cloud.labels == 1
        assert sel.any()
        assert np.allclose(out.points[sel], cloud.points[sel] + [0.3, 0.0, 0.0])
        assert np.array_equal(out.points[~sel], cloud.points[~sel])

    def test_cloud_and_track_edits_agree_on_coincident_points(self, toy_pair):
        # same explicit pivot => identical rigid maps; a cloud point placed
        # exactly at a track position must land exactly where the track does
        pair, _ = toy_pair
        pivot = [0.1, -0.2, 2.4]
        rot = rotation_about_axis([0, 0, 1], 0.4)
        from trackedit.geometry import quat_from_matrix

        quat = quat_from_matrix(rot).tolist()
        spec = EditSpec.from_json(
            {"ops": [{"kind": "rigid", "selection": {"object_id": 1},
                      "keyframes": [{"frame": 0, "quat": quat, "t": [0.05, 0.02, 0.0]}],
                      "params": {"pivot": pivot}}]}
        )
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        edited_tracks = apply_editspec(pair, spec).target_tracks
        cloud = ColoredPointCloud(
            pair.target_tracks.positions[3, idx],
            np.zeros((idx.size, 3)),
            np.ones(idx.size, dtype=np.int64),
        )
        out = apply_cloud_edit(cloud, resolve_cloud_ops(pair, spec), 3)
        assert np.abs(out.points - edited_tracks.positions[3, idx]).max() < 1e-12


class TestRenderPreview:
    def test_identity_edit_identity_camera_reproduces_input(self, toy_pair):
        from dataclasses import replace

        pair, _ = toy_pair
        pair = replace(pair, target_camera=pair.source_camera)  # identity camera edit
        clip, coverage = render_preview(pair, EditSpec.from_json({"ops": []}))
        covered = coverage.astype(bool)
        src = pair.source_video.frames
        diff = np.abs(clip.frames - src)[covered]
        assert covered.mean() > 0.99
        assert diff.max() < 1e-12

    def test_requires_depth(self, toy_pair):
        from dataclasses import replace

        pair, _ = toy_pair
        with pytest.raises(MissingDepth):
            render_preview(replace(pair, depth_maps=None), EditSpec.from_json({"ops": []}))

    def test_removal_uncovers_object_pixels(self, toy_pair):
        pair, _ = toy_pair
        spec = EditSpec.from_json({"ops": [{"kind": "remove", "selection": {"object_id": 1}}]})
        clip, coverage = render_preview(pair, spec)
        # pixels of the removed object (not re-covered by background) go dark
        obj = pair.masks == 1
        uncovered_frac = 1.0 - coverage[obj].mean()
        assert uncovered_frac > 0.9

    def test_camera_dolly_reduces_coverage_monotonically(self, toy_pair):
        pair, _ = toy_pair
        coverages = []
        for dolly in (0.0, 0.35, 0.7):
            spec = EditSpec.from_json(
                {"ops": [{"kind": "camera", "params": {"mode": "relative"},
                          "keyframes": [{"frame": 0, "t": [0.0, 0.0, -dolly]}]}]}
            )
            _, coverage = render_preview(pair, spec)
            coverages.append(coverage.mean())
        assert coverages[0] >= coverages[1] >= coverages[2]
        assert coverages[2] < coverages[0]
