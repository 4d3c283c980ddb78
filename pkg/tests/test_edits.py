"""Edit engine: selections, rigid/LBS edits, camera edits, and structure ops."""

import numpy as np
import pytest

from conftest import make_simple_pair, simple_intrinsics
from oracles import project_by_matrix, rotation_about_axis, rotation_about_z
from trackedit.edits import (
    EditSpec,
    Selection,
    apply_editspec,
    apply_lbs_deform,
    apply_rigid_edit,
    canonical_editspec_json,
    drop_tracks,
    duplicate_object,
    edit_camera_path,
    editspec_hash,
    freeze_background,
    remove_object,
    select_tracks,
    transfer_tracks,
)
from trackedit.errors import (
    CountMismatch,
    EmptySelection,
    SchemaViolation,
    UnknownObject,
    WouldBeEmpty,
)
from trackedit.geometry import (
    CameraPath,
    MIN_DEPTH,
    RigidPose,
    SimilarityTransform,
    project_many,
    quat_from_matrix,
)
from trackedit.tracks import TrackSet


def kf(frame, scale=1.0, rot=None, t=(0.0, 0.0, 0.0)):
    rot = np.eye(3) if rot is None else rot
    return (frame, SimilarityTransform(scale, rot, np.asarray(t, dtype=np.float64)))


class TestSelectTracks:
    def test_full_frame_box_selects_all_in_frame(self, simple_pair):
        ts, cam = simple_pair.source_tracks, simple_pair.source_camera
        sel = Selection(box=(0, 0.0, 0.0, cam.width, cam.height))
        idx = select_tracks(ts, cam, sel)
        intr, pose = cam[0]
        xy, depth = project_many(ts.positions[0], intr, pose)
        in_frame = (
            (depth > MIN_DEPTH)
            & (xy[:, 0] >= 0) & (xy[:, 0] < cam.width)
            & (xy[:, 1] >= 0) & (xy[:, 1] < cam.height)
        )
        assert np.array_equal(idx, np.flatnonzero(in_frame))

    def test_object_selection_matches_generator(self, toy_pair):
        pair, _ = toy_pair
        idx = select_tracks(pair.source_tracks, pair.source_camera, Selection(object_id=1))
        assert np.array_equal(idx, np.flatnonzero(pair.source_tracks.object_id == 1))

    def test_zero_area_box_is_empty_selection(self, simple_pair):
        sel = Selection(box=(0, 10.0, 10.0, 10.0, 20.0))
        with pytest.raises(EmptySelection):
            select_tracks(simple_pair.source_tracks, simple_pair.source_camera, sel)

    def test_unknown_object_empty(self, simple_pair):
        with pytest.raises(EmptySelection):
            select_tracks(simple_pair.source_tracks, simple_pair.source_camera, Selection(object_id=99))

    def test_box_outside_bounds_rejected(self, simple_pair):
        with pytest.raises(SchemaViolation):
            select_tracks(
                simple_pair.source_tracks,
                simple_pair.source_camera,
                Selection(box=(0, -5.0, 0.0, 10.0, 10.0)),
            )

    def test_selection_needs_exactly_one_form(self):
        with pytest.raises(SchemaViolation):
            Selection(object_id=1, indices=(0,))


class TestRigidEdit:
    def test_identity_keyframes_bit_exact(self, simple_pair):
        ts = simple_pair.target_tracks
        out = apply_rigid_edit(ts, np.arange(3), [kf(0), kf(3)])
        assert np.array_equal(out.positions, ts.positions)

    def test_constant_translation_exact_shift(self, simple_pair):
        ts = simple_pair.target_tracks
        idx = np.array([0, 2, 5])
        out = apply_rigid_edit(ts, idx, [kf(0, t=(1.0, 0.0, 0.0))])
        assert np.array_equal(out.positions[:, idx], ts.positions[:, idx] + [1.0, 0.0, 0.0])

    def test_unselected_tracks_bit_identical(self, simple_pair):
        ts = simple_pair.target_tracks
        idx = np.array([1, 3])
        rest = np.setdiff1d(np.arange(ts.n_tracks), idx)
        out = apply_rigid_edit(ts, idx, [kf(0, rot=rotation_about_z(0.7), t=(0.2, 0, 0))])
        assert np.array_equal(out.positions[:, rest], ts.positions[:, rest])

    def test_yaw_about_centroid_isometry(self, simple_pair):
        ts = simple_pair.target_tracks
        idx = np.arange(ts.n_tracks)
        out = apply_rigid_edit(ts, idx, [kf(0, rot=rotation_about_z(np.pi))])
        # at the anchor frame the pivot is the selection centroid, so a 180
        # degree yaw leaves the centroid fixed
        pivot = ts.positions[0, idx].mean(axis=0)
        assert np.abs(out.positions[0, idx].mean(axis=0) - pivot).max() < 1e-9
        # rigid maps preserve each point's distance to the (mapped) centroid
        for f in range(ts.n_frames):
            before = ts.positions[f, idx]
            after = out.positions[f, idx]
            d_before = np.linalg.norm(before - before.mean(0), axis=1)
            d_after = np.linalg.norm(after - after.mean(0), axis=1)
            assert np.abs(d_before - d_after).max() < 1e-9

    def test_pure_rotation_preserves_pairwise_distances(self, simple_pair, rng):
        ts = simple_pair.target_tracks
        idx = np.arange(0, ts.n_tracks, 2)
        rot = rotation_about_axis(rng.normal(size=3), 1.1)
        out = apply_rigid_edit(ts, idx, [kf(0, rot=rot)])
        a = ts.positions[1, idx]
        b = out.positions[1, idx]
        da = np.linalg.norm(a[:, None] - a[None, :], axis=-1)
        db = np.linalg.norm(b[:, None] - b[None, :], axis=-1)
        assert np.abs(da - db).max() < 1e-9 * max(1.0, da.max())

    def test_keyframe_interpolation_between_two_poses(self, simple_pair):
        ts = simple_pair.target_tracks
        idx = np.array([0])
        out = apply_rigid_edit(
            ts, idx, [kf(0, t=(0, 0, 0)), kf(2, t=(2.0, 0, 0))], pivot=np.zeros(3)
        )
        shift = out.positions[1, 0] - ts.positions[1, 0]
        assert np.allclose(shift, [1.0, 0.0, 0.0])


class TestLBS:
    def test_single_handle_containing_all_equals_rigid(self, simple_pair):
        ts = simple_pair.target_tracks
        idx = np.arange(ts.n_tracks)
        keyframes = [kf(0, rot=rotation_about_z(0.5), t=(0.1, -0.2, 0.0))]
        lbs = apply_lbs_deform(ts, [(idx, keyframes)])
        rigid = apply_rigid_edit(ts, idx, keyframes)
        assert np.allclose(lbs.positions, rigid.positions, atol=1e-12)

    def test_point_beyond_radius_unchanged(self):
        positions = np.zeros((2, 3, 3))
        positions[:, 1] = [10.0, 0.0, 0.0]
        positions[:, 2] = [0.2, 0.0, 0.0]
        ts = TrackSet.from_positions(positions)
        out = apply_lbs_deform(ts, [(np.array([0]), [kf(0, t=(0, 1.0, 0))])], radius=1.0)
        assert np.array_equal(out.positions[:, 1], ts.positions[:, 1])  # far: untouched
        assert np.allclose(out.positions[:, 2, 1], 1.0)  # near: dragged along

    def test_opposite_handles_cancel_at_midpoint(self):
        positions = np.zeros((1, 3, 3))
        positions[0, 0] = [-1.0, 0.0, 0.0]
        positions[0, 1] = [1.0, 0.0, 0.0]
        positions[0, 2] = [0.0, 0.0, 0.0]  # equidistant midpoint
        ts = TrackSet.from_positions(positions)
        out = apply_lbs_deform(
            ts,
            [
                (np.array([0]), [kf(0, t=(0, 1.0, 0))]),
                (np.array([1]), [kf(0, t=(0, -1.0, 0))]),
            ],
            radius=10.0,
        )
        assert np.abs(out.positions[0, 2] - ts.positions[0, 2]).max() < 1e-9

    def test_weights_sum_to_one_displacement_bounded(self, rng):
        positions = rng.normal(size=(1, 30, 3))
        ts = TrackSet.from_positions(positions)
        handles = [
            (np.array([0, 1]), [kf(0, t=(0.5, 0, 0))]),
            (np.array([2, 3]), [kf(0, t=(0.5, 0, 0))]),
        ]
        out = apply_lbs_deform(ts, handles, radius=100.0)
        # all handles translate identically => every in-radius point gets the
        # full translation (weights normalized), none overshoots
        moved = out.positions[0, 4:] - positions[0, 4:]
        assert np.allclose(moved, [0.5, 0.0, 0.0], atol=1e-9)

    def test_disjoint_handles_required(self, simple_pair):
        ts = simple_pair.target_tracks
        with pytest.raises(SchemaViolation):
            apply_lbs_deform(ts, [(np.array([0, 1]), [kf(0)]), (np.array([1, 2]), [kf(0)])])


class TestCameraEdit:
    def test_zero_offsets_bit_exact(self, simple_pair):
        cam = simple_pair.target_camera
        out = edit_camera_path(cam, [kf(0), kf(2)], mode="relative")
        assert out is cam

    def test_constant_offset_shifts_centers(self, simple_pair, rng):
        # oracle: compose 4x4 homogeneous matrices by hand
        intr = simple_intrinsics()
        frames = []
        for k in range(4):
            rot = rotation_about_axis(rng.normal(size=3), 0.2 * k)
            frames.append((intr, RigidPose(rot, rng.normal(size=3))))
        cam = CameraPath(tuple(frames))
        delta = np.array([0.3, -0.1, 0.5])
        out = edit_camera_path(cam, [kf(0, t=tuple(delta))], mode="relative")
        for k in range(4):
            _, pose = cam[k]
            _, new_pose = out[k]
            assert np.abs(new_pose.center() - (pose.center() + delta)).max() < 1e-12
            # brute-force 4x4 composition oracle
            p_mat = np.eye(4)
            p_mat[:3, :3] = pose.rotation
            p_mat[:3, 3] = pose.translation
            o_inv = np.eye(4)
            o_inv[:3, 3] = -delta
            expected = p_mat @ o_inv
            assert np.abs(new_pose.rotation - expected[:3, :3]).max() < 1e-12
            assert np.abs(new_pose.translation - expected[:3, 3]).max() < 1e-12

    def test_absolute_orbit_centers_on_circle(self):
        # generator oracle: look-at poses on a circle of radius r
        r = 3.0
        intr = simple_intrinsics()
        keyframes = []
        n = 6
        for k in range(n):
            theta = 2 * np.pi * k / (n - 1) / 4
            center = np.array([r * np.sin(theta), 0.0, -r * np.cos(theta)])
            rot = rotation_about_axis([0, 1, 0], -theta)
            pose = RigidPose(rot, -rot @ center)
            keyframes.append((k, SimilarityTransform(1.0, pose.rotation, pose.translation)))
        cam = CameraPath.static(intr, RigidPose.identity(), n)
        out = edit_camera_path(cam, keyframes, mode="absolute")
        for k in range(n):
            _, pose = out[k]
            assert abs(np.linalg.norm(pose.center()) - r) < 1e-9

    def test_intrinsics_override(self, simple_pair):
        cam = simple_pair.target_camera
        out = edit_camera_path(cam, [kf(0)], mode="relative", intrinsics_override={"fx": 99.0})
        assert out[0][0].fx == 99.0 and out[0][0].fy == cam[0][0].fy

    def test_scaled_keyframe_rejected(self, simple_pair):
        with pytest.raises(SchemaViolation):
            edit_camera_path(simple_pair.target_camera, [kf(0, scale=2.0)], mode="relative")


class TestRemoveObject:
    def test_offscreen_and_existence(self, toy_pair):
        pair, _ = toy_pair
        out = remove_object(pair.target_tracks, 1, pair.target_camera)
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        rest = np.setdiff1d(np.arange(pair.target_tracks.n_tracks), idx)
        w = pair.target_camera.width
        for k in range(out.n_frames):
            intr, pose = pair.target_camera[k]
            xy, depth = project_many(out.positions[k, idx], intr, pose)
            assert np.all(depth > 0)
            assert np.all(xy[:, 0] / w >= 2.0 - 1e-12)
        assert np.all(out.existence[:, idx] == 0)
        assert np.array_equal(out.existence[:, rest], pair.target_tracks.existence[:, rest])
        assert np.array_equal(out.positions[:, rest], pair.target_tracks.positions[:, rest])

    def test_other_object_bit_identical(self, toy_pair):
        pair, _ = toy_pair
        out = remove_object(pair.target_tracks, 1, pair.target_camera)
        idx2 = np.flatnonzero(pair.target_tracks.object_id == 2)
        assert idx2.size > 0
        assert np.array_equal(out.positions[:, idx2], pair.target_tracks.positions[:, idx2])

    def test_unknown_object(self, toy_pair):
        pair, _ = toy_pair
        with pytest.raises(UnknownObject):
            remove_object(pair.target_tracks, 42, pair.target_camera)


class TestDuplicateObject:
    def test_identity_transform_appends_verbatim(self, toy_pair):
        pair, _ = toy_pair
        src, tgt = duplicate_object(pair.source_tracks, pair.target_tracks, 1, [kf(0)])
        idx = np.flatnonzero(pair.source_tracks.object_id == 1)
        n0 = pair.source_tracks.n_tracks
        assert src.n_tracks == n0 + idx.size and tgt.n_tracks == n0 + idx.size
        assert np.array_equal(src.positions[:, n0:], pair.source_tracks.positions[:, idx])
        assert np.array_equal(tgt.positions[:, n0:], pair.target_tracks.positions[:, idx])
        new_id = src.object_id[n0]
        assert new_id not in pair.source_tracks.object_id
        assert np.all(src.object_id[n0:] == new_id) and np.all(tgt.object_id[n0:] == new_id)

    def test_translated_duplicate_projection_oracle(self, toy_pair):
        pair, _ = toy_pair
        delta = (0.4, 0.0, 0.0)
        _, tgt = duplicate_object(pair.source_tracks, pair.target_tracks, 1, [kf(0, t=delta)])
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        n0 = pair.target_tracks.n_tracks
        for k in (0, pair.n_frames - 1):
            intr, pose = pair.target_camera[k]
            for j, orig_j in enumerate(idx[:5]):
                moved = pair.target_tracks.positions[k, orig_j] + delta
                ox, oy, _ = project_by_matrix(moved, intr, pose)
                x, y, _ = project_by_matrix(tgt.positions[k, n0 + j], intr, pose)
                assert abs(x - ox) < 1e-9 and abs(y - oy) < 1e-9

    def test_pairing_preserved(self, toy_pair):
        pair, _ = toy_pair
        src, tgt = duplicate_object(pair.source_tracks, pair.target_tracks, 2, [kf(0)])
        assert src.n_tracks == tgt.n_tracks


class TestTransferAndDrop:
    def test_transfer_noop_with_original(self, toy_pair):
        pair, _ = toy_pair
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        replacement = pair.target_tracks.take(idx)
        out = transfer_tracks(pair.target_tracks, 1, replacement)
        assert np.array_equal(out.positions, pair.target_tracks.positions)

    def test_transfer_equals_rigid_translation(self, toy_pair):
        pair, _ = toy_pair
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        replacement = pair.target_tracks.take(idx).with_positions(
            pair.target_tracks.positions[:, idx] + [0.0, 1.0, 0.0]
        )
        out = transfer_tracks(pair.target_tracks, 1, replacement)
        rigid = apply_rigid_edit(pair.target_tracks, idx, [kf(0, t=(0.0, 1.0, 0.0))])
        assert np.array_equal(out.positions, rigid.positions)
        assert np.array_equal(out.existence, pair.target_tracks.existence)

    def test_transfer_generator_swap_bit_exact(self, toy_pair):
        # motion-transfer fixture: replace object 1's target motion with the
        # same object rendered under a different generator script
        from trackedit.scenes import ToySceneConfig, gen_procedural_pair

        pair, _ = toy_pair
        donor, _ = gen_procedural_pair(99, ToySceneConfig(n_billboards=2))
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        donor_idx = np.flatnonzero(donor.target_tracks.object_id == 1)[: idx.size]
        assert donor_idx.size == idx.size
        replacement = donor.target_tracks.take(donor_idx)
        out = transfer_tracks(pair.target_tracks, 1, replacement)
        assert np.array_equal(out.positions[:, idx], replacement.positions)
        rest = np.setdiff1d(np.arange(pair.target_tracks.n_tracks), idx)
        assert np.array_equal(out.positions[:, rest], pair.target_tracks.positions[:, rest])

    def test_transfer_count_mismatch(self, toy_pair):
        pair, _ = toy_pair
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        bad = pair.target_tracks.take(idx[:-1])
        with pytest.raises(CountMismatch):
            transfer_tracks(pair.target_tracks, 1, bad)

    def test_drop_reduces_both_sides(self, toy_pair):
        pair, _ = toy_pair
        idx = np.flatnonzero(pair.source_tracks.object_id == 1)
        src, tgt = drop_tracks(pair.source_tracks, pair.target_tracks, idx)
        assert src.n_tracks == pair.source_tracks.n_tracks - idx.size
        assert tgt.n_tracks == src.n_tracks
        assert 1 not in src.object_id

    def test_drop_none_is_identity(self, toy_pair):
        pair, _ = toy_pair
        src, tgt = drop_tracks(pair.source_tracks, pair.target_tracks, np.array([], dtype=np.int64))
        assert np.array_equal(src.positions, pair.source_tracks.positions)

    def test_drop_then_select_by_old_object_id(self, toy_pair):
        pair, _ = toy_pair
        idx1 = np.flatnonzero(pair.source_tracks.object_id == 1)
        src, _ = drop_tracks(pair.source_tracks, pair.target_tracks, idx1)
        idx2 = select_tracks(src, pair.source_camera, Selection(object_id=2))
        assert np.all(src.object_id[idx2] == 2)

    def test_drop_everything_rejected(self, toy_pair):
        pair, _ = toy_pair
        with pytest.raises(WouldBeEmpty):
            drop_tracks(
                pair.source_tracks,
                pair.target_tracks,
                np.arange(pair.source_tracks.n_tracks),
            )


class TestFreezeBackground:
    def test_static_background_unchanged(self):
        positions = np.zeros((3, 2, 3))
        positions[:, 1] = [1.0, 2.0, 3.0]
        ts = TrackSet.from_positions(positions)  # everything background
        out = freeze_background(ts, 0)
        assert np.array_equal(out.positions, ts.positions)

    def test_jittered_background_pinned(self, rng):
        positions = rng.normal(size=(4, 6, 3))
        object_id = np.array([0, 0, 0, 1, 1, 2], dtype=np.int64)
        ones = np.ones((4, 6), dtype=np.uint8)
        ts = TrackSet(positions, object_id, ones, ones.copy())
        out = freeze_background(ts, 2)
        bg = np.flatnonzero(object_id == 0)
        fg = np.flatnonzero(object_id != 0)
        assert np.all(out.positions[:, bg].std(axis=0) == 0.0)
        assert np.array_equal(out.positions[:, bg][0], positions[2, bg])
        assert np.array_equal(out.positions[:, fg], positions[:, fg])


class TestEditSpec:
    SPEC = {
        "ops": [
            {
                "kind": "rigid",
                "selection": {"object_id": 1},
                "keyframes": [{"frame": 0, "t": [0.5, 0.0, 0.0]}],
            }
        ]
    }

    def test_parse_apply_deterministic(self, toy_pair):
        pair, _ = toy_pair
        spec = EditSpec.from_json(self.SPEC)
        out1 = apply_editspec(pair, spec)
        out2 = apply_editspec(pair, spec)
        assert np.array_equal(out1.target_tracks.positions, out2.target_tracks.positions)
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        assert np.array_equal(
            out1.target_tracks.positions[:, idx],
            pair.target_tracks.positions[:, idx] + [0.5, 0.0, 0.0],
        )

    def test_ops_compose_in_order(self, toy_pair):
        pair, _ = toy_pair
        spec = EditSpec.from_json(
            {
                "ops": [
                    {"kind": "rigid", "selection": {"object_id": 1},
                     "keyframes": [{"frame": 0, "t": [0.25, 0, 0]}]},
                    {"kind": "rigid", "selection": {"object_id": 1},
                     "keyframes": [{"frame": 0, "t": [0.25, 0, 0]}]},
                ]
            }
        )
        out = apply_editspec(pair, spec)
        idx = np.flatnonzero(pair.target_tracks.object_id == 1)
        assert np.allclose(
            out.target_tracks.positions[:, idx],
            pair.target_tracks.positions[:, idx] + [0.5, 0.0, 0.0],
            atol=1e-12,
        )

    def test_identity_spec_preserves_everything(self, toy_pair):
        pair, _ = toy_pair
        spec = EditSpec.from_json({"ops": []})
        out = apply_editspec(pair, spec)
        assert np.array_equal(out.target_tracks.positions, pair.target_tracks.positions)

    def test_validation_before_mutation(self, toy_pair):
        with pytest.raises(SchemaViolation):
            EditSpec.from_json({"ops": [{"kind": "rigid", "selection": {"object_id": 1},
                                         "keyframes": [{"frame": 3}, {"frame": 1}]}]})
        with pytest.raises(SchemaViolation):
            EditSpec.from_json({"ops": [{"kind": "warp"}]})

    def test_canonical_json_and_hash(self):
        a = '{"ops": [{"kind": "rigid", "selection": {"object_id": 1}, "keyframes": [{"frame": 0, "t": [1.0, 0.0, 0.0]}]}]}'
        b = '{"ops":[{"keyframes":[{"t":[1,0,0],"frame":0}],"selection":{"object_id":1},"kind":"rigid"}]}'
        assert canonical_editspec_json(a) == canonical_editspec_json(b)
        assert editspec_hash(a) == editspec_hash(b)
        assert len(editspec_hash(a)) == 64

    def test_canonical_form_cross_language_anchor(self):
        # the same fixture is pinned byte-for-byte in the UI test suite
        # (frontend/tests/editspec.test.ts), keeping exports interchangeable
        doc = {
            "ops": [
                {"kind": "rigid",
                 "selection": {"box": {"frame": 2, "x0": 4.0, "y0": 3.5, "x1": 20.0, "y1": 17.0}},
                 "keyframes": [
                     {"frame": 0},
                     {"frame": 15, "t": [0.25, -0.1, 0.0],
                      "quat": [0.965926, 0, 0, 0.258819], "scale": 1.2},
                 ]},
                {"kind": "camera", "params": {"mode": "relative"},
                 "keyframes": [{"frame": 0}, {"frame": 15, "t": [0.05, 0.0, -0.2]}]},
                {"kind": "remove", "selection": {"object_id": 2}},
            ]
        }
        expected = (
            '{"ops":[{"keyframes":[{"frame":0},{"frame":15,"quat":[0.965926,0,0,0.258819],'
            '"scale":1.2,"t":[0.25,-0.1,0]}],"kind":"rigid","selection":{"box":{"frame":2,'
            '"x0":4,"x1":20,"y0":3.5,"y1":17}}},{"keyframes":[{"frame":0},{"frame":15,'
            '"t":[0.05,0,-0.2]}],"kind":"camera","params":{"mode":"relative"}},'
            '{"kind":"remove","selection":{"object_id":2}}]}'
        )
        assert canonical_editspec_json(doc) == expected
        assert editspec_hash(doc) == "41838f8eab42c72627594fa832c75c4f8af411f74285a19dd22013e881a20653"
