"""Declarative motion edits over clip pairs.

An EditSpec is an ordered list of operations; each op is applied to the
result of the previous one, matching a script-driven workflow. Object edits
touch only the target track set (the target starts as a copy of the source
motion), camera edits touch only the target camera path, and structural
edits (drop/duplicate) keep the source/target pairing aligned by touching
both sides.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    CountMismatch,
    EmptySelection,
    SchemaViolation,
    ShapeMismatch,
    UnknownObject,
    WouldBeEmpty,
)
from .geometry import (
    CameraIntrinsics,
    CameraPath,
    MIN_DEPTH,
    RigidPose,
    SimilarityTransform,
    matrix_from_quat,
    project_many,
    transform_at_frame,
)
from .tracks import ClipPair, TrackSet

LBS_EPS = 1e-6

EDIT_KINDS = (
    "rigid",
    "lbs",
    "camera",
    "remove",
    "duplicate",
    "transfer",
    "drop",
    "freeze_background",
)


# ---------------------------------------------------------------------------
# selections


@dataclass(frozen=True)
class Selection:
    """Either an object id, a (keyframe, 2D pixel box), or explicit indices."""

    object_id: int | None = None
    box: tuple | None = None  # (frame, x0, y0, x1, y1) in pixels
    indices: tuple | None = None

    def __post_init__(self):
        given = sum(x is not None for x in (self.object_id, self.box, self.indices))
        if given != 1:
            raise SchemaViolation("selection must set exactly one of object_id/box/indices")


def select_tracks(ts: TrackSet, cam: CameraPath, sel: Selection) -> np.ndarray:
    """Resolve a Selection to a sorted array of track indices.

    Box selection keeps tracks whose projection at the keyframe falls inside
    the box (behind-camera tracks never match). Raises EmptySelection when
    nothing matches.
    """
    if sel.object_id is not None:
        idx = np.flatnonzero(ts.object_id == sel.object_id)
        if idx.size == 0:
            raise EmptySelection(f"no tracks labeled object_id={sel.object_id}")
        return idx
    if sel.indices is not None:
        idx = np.asarray(sorted(set(int(i) for i in sel.indices)), dtype=np.int64)
        if idx.size == 0:
            raise EmptySelection("empty index list")
        if idx.min() < 0 or idx.max() >= ts.n_tracks:
            raise SchemaViolation(
                f"selection indices out of range [0, {ts.n_tracks}): {idx.min()}..{idx.max()}"
            )
        return idx
    frame, x0, y0, x1, y1 = sel.box
    if not 0 <= frame < ts.n_frames:
        raise SchemaViolation(f"selection keyframe {frame} outside [0, {ts.n_frames})")
    w, h = cam.width, cam.height
    if not (0 <= x0 <= w and 0 <= x1 <= w and 0 <= y0 <= h and 0 <= y1 <= h):
        raise SchemaViolation(f"box ({x0}, {y0}, {x1}, {y1}) exceeds {w}x{h} frame")
    if x0 >= x1 or y0 >= y1:
        raise EmptySelection(f"box ({x0}, {y0}, {x1}, {y1}) has no area")
    intr, pose = cam[frame]
    xy, depth = project_many(ts.positions[frame], intr, pose)
    inside = (
        (depth > MIN_DEPTH)
        & (xy[:, 0] >= x0)
        & (xy[:, 0] < x1)
        & (xy[:, 1] >= y0)
        & (xy[:, 1] < y1)
    )
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        raise EmptySelection("no track projects inside the box")
    return idx


# ---------------------------------------------------------------------------
# keyframes


def _parse_keyframe(rec: dict, where: str) -> tuple:
    if "frame" not in rec:
        raise SchemaViolation(f"{where}: keyframe missing 'frame'")
    frame = int(rec["frame"])
    scale = float(rec.get("scale", 1.0))
    quat = np.asarray(rec.get("quat", (1.0, 0.0, 0.0, 0.0)), dtype=np.float64)
    t = np.asarray(rec.get("t", (0.0, 0.0, 0.0)), dtype=np.float64)
    if quat.shape != (4,):
        raise SchemaViolation(f"{where}: 'quat' must hold 4 numbers (w, x, y, z)")
    if t.shape != (3,):
        raise SchemaViolation(f"{where}: 't' must hold 3 numbers")
    if abs(np.linalg.norm(quat)) < 1e-12:
        raise SchemaViolation(f"{where}: zero quaternion")
    rotation = matrix_from_quat(quat)
    if np.allclose(rotation, np.eye(3), atol=1e-15):
        rotation = np.eye(3)  # keep exact identity so identity edits stay bit-exact
    try:
        st = SimilarityTransform(scale, rotation, t)
    except ValueError as exc:
        raise SchemaViolation(f"{where}: {exc}")
    return frame, st


def _parse_keyframes(recs, where: str) -> list:
    if not isinstance(recs, list) or not recs:
        raise SchemaViolation(f"{where}: at least one keyframe required")
    kfs = [_parse_keyframe(r, f"{where}.keyframes[{i}]") for i, r in enumerate(recs)]
    frames = [k for k, _ in kfs]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise SchemaViolation(f"{where}: keyframe frames must be strictly increasing")
    return kfs


def _all_identity(keyframes) -> bool:
    return all(st.is_identity() for _, st in keyframes)


def _selection_centroid(ts: TrackSet, indices: np.ndarray, frame: int) -> np.ndarray:
    return ts.positions[frame, indices].mean(axis=0)


# ---------------------------------------------------------------------------
# track edits


def apply_rigid_edit(
    ts: TrackSet,
    indices: np.ndarray,
    keyframes,
    pivot: np.ndarray | None = None,
) -> TrackSet:
    """Apply a keyframed similarity transform to the selected tracks.

    The transform is interpolated per frame (clamped outside the keyframe
    range) and applied about `pivot`, defaulting to the selection centroid
    at the first keyframe. Unselected tracks come through bit-identical.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if _all_identity(keyframes):
        return ts
    anchor = min(max(keyframes[0][0], 0), ts.n_frames - 1)
    if pivot is None:
        pivot = _selection_centroid(ts, indices, anchor)
    positions = ts.positions.copy()
    for f in range(ts.n_frames):
        st = transform_at_frame(keyframes, f)
        positions[f, indices] = st.apply_about(positions[f, indices], pivot)
    return ts.with_positions(positions)


def apply_lbs_deform(ts: TrackSet, handles, radius: float | None = None) -> TrackSet:
    """Deform tracks by blending keyframed handle transforms.

    handles: list of (indices, keyframes). Handle members get their exact
    transform (about the handle centroid at the anchor frame). Every other
    track is displaced by the weight-normalized sum of handle displacements,
    with inverse-distance weights measured at the anchor frame and forced
    to zero beyond `radius`. The anchor frame is the earliest first
    keyframe across handles.
    """
    parsed = [(np.asarray(idx, dtype=np.int64), kfs) for idx, kfs in handles]
    if not parsed:
        raise SchemaViolation("lbs needs at least one handle")
    all_handle = np.concatenate([idx for idx, _ in parsed])
    if np.unique(all_handle).size != all_handle.size:
        raise SchemaViolation("lbs handle sets must be disjoint")
    anchor = min(max(min(kfs[0][0] for _, kfs in parsed), 0), ts.n_frames - 1)

    pivots = [_selection_centroid(ts, idx, anchor) for idx, _ in parsed]
    if radius is None:
        union = ts.positions[anchor, all_handle]
        radius = 2.0 * float(np.linalg.norm(union - union.mean(axis=0), axis=1).max())

    free = np.setdiff1d(np.arange(ts.n_tracks), all_handle)
    anchor_pos = ts.positions[anchor]
    dists = np.stack(
        [
            np.linalg.norm(anchor_pos[free, None, :] - ts.positions[anchor, idx][None, :, :], axis=2).min(axis=1)
            for idx, _ in parsed
        ],
        axis=1,
    )  # (n_free, n_handles)
    raw = np.where(dists <= radius, 1.0 / (dists + LBS_EPS), 0.0)
    total = raw.sum(axis=1)
    moved = total > 0
    weights = np.zeros_like(raw)
    weights[moved] = raw[moved] / total[moved, None]

    positions = ts.positions.copy()
    moved_free = free[moved]
    for f in range(ts.n_frames):
        transforms = [transform_at_frame(kfs, f) for _, kfs in parsed]
        for (idx, _), st, pivot in zip(parsed, transforms, pivots):
            positions[f, idx] = st.apply_about(positions[f, idx], pivot)
        if moved_free.size:
            p = ts.positions[f, moved_free]
            disp = np.zeros_like(p)
            for h, (st, pivot) in enumerate(zip(transforms, pivots)):
                disp += weights[moved, h, None] * (st.apply_about(p, pivot) - p)
            positions[f, moved_free] = p + disp
    return ts.with_positions(positions)


def edit_camera_path(
    cam: CameraPath,
    keyframes,
    mode: str = "relative",
    intrinsics_override: dict | None = None,
) -> CameraPath:
    """Edit a camera path by keyframed pose offsets or absolute replacement.

    Relative mode treats each keyframe as a world-space rigid motion of the
    camera: the new world-to-camera map is pose o offset^-1, so a pure
    translation offset shifts every camera center by that world vector.
    Absolute mode replaces the pose with the interpolated keyframe pose.
    Keyframe scales must be 1 (cameras are rigid).
    """
    if mode not in ("relative", "absolute"):
        raise SchemaViolation(f"camera edit mode must be relative|absolute, got '{mode}'")
    for f, st in keyframes:
        if st.scale != 1.0:
            raise SchemaViolation(f"camera keyframe at {f} has scale {st.scale} != 1")
    if mode == "relative" and _all_identity(keyframes) and intrinsics_override is None:
        return cam

    frames = []
    for f in range(len(cam)):
        intr, pose = cam[f]
        st = transform_at_frame(keyframes, f)
        if mode == "relative":
            offset = RigidPose(st.rotation, st.translation)
            new_pose = pose.compose(offset.inverse())
        else:
            new_pose = RigidPose(st.rotation, st.translation)
        if intrinsics_override:
            intr = CameraIntrinsics(
                fx=float(intrinsics_override.get("fx", intr.fx)),
                fy=float(intrinsics_override.get("fy", intr.fy)),
                cx=float(intrinsics_override.get("cx", intr.cx)),
                cy=float(intrinsics_override.get("cy", intr.cy)),
                width=intr.width,
                height=intr.height,
            )
        frames.append((intr, new_pose))
    return CameraPath(tuple(frames))


def remove_object(ts: TrackSet, object_id: int, cam: CameraPath) -> TrackSet:
    """Mark an object removed: existence 0 plus off-screen track motion.

    Each selected sample is translated along the camera-right direction at
    its original depth so its projection lands at exactly x = 2 * width.
    """
    idx = np.flatnonzero(ts.object_id == object_id)
    if idx.size == 0:
        raise UnknownObject(f"no tracks labeled object_id={object_id}")
    positions = ts.positions.copy()
    for f in range(ts.n_frames):
        intr, pose = cam[f]
        p_cam = pose.apply(positions[f, idx])
        z = p_cam[:, 2]
        ok = z > MIN_DEPTH
        p_cam[ok, 0] = (2.0 * intr.width - intr.cx) * z[ok] / intr.fx
        positions[f, idx] = pose.inverse().apply(p_cam)
    existence = ts.existence.copy()
    existence[:, idx] = 0
    return replace(ts, positions=positions, existence=existence)


def duplicate_object(
    src: TrackSet,
    tgt: TrackSet,
    object_id: int,
    keyframes,
) -> tuple:
    """Append a transformed copy of an object to both sides of a pair.

    Source tracks are appended verbatim; target tracks get the keyframed
    transform (about the object's target centroid at the first keyframe).
    The appended tracks share a fresh object id, and appended index i on the
    source corresponds to appended index i on the target.
    """
    idx = np.flatnonzero(src.object_id == object_id)
    if idx.size == 0 or not np.array_equal(idx, np.flatnonzero(tgt.object_id == object_id)):
        raise UnknownObject(f"object_id={object_id} missing or unpaired")
    new_id = int(max(src.object_id.max(), tgt.object_id.max())) + 1

    def _append(ts: TrackSet, columns: TrackSet) -> TrackSet:
        return TrackSet(
            np.concatenate([ts.positions, columns.positions], axis=1),
            np.concatenate([ts.object_id, np.full(idx.size, new_id, dtype=np.int64)]),
            np.concatenate([ts.existence, columns.existence], axis=1),
            np.concatenate([ts.visibility, columns.visibility], axis=1),
        )

    tgt_copy = tgt.take(idx)
    tgt_moved = apply_rigid_edit(tgt_copy, np.arange(idx.size), keyframes)
    return _append(src, src.take(idx)), _append(tgt, tgt_moved)


def transfer_tracks(tgt: TrackSet, object_id: int, replacement: TrackSet) -> TrackSet:
    """Replace the target positions of one object with external tracks."""
    idx = np.flatnonzero(tgt.object_id == object_id)
    if idx.size == 0:
        raise UnknownObject(f"no tracks labeled object_id={object_id}")
    if replacement.n_tracks != idx.size:
        raise CountMismatch(
            f"replacement has {replacement.n_tracks} tracks, object has {idx.size}"
        )
    if replacement.n_frames != tgt.n_frames:
        raise CountMismatch(
            f"replacement has {replacement.n_frames} frames, pair has {tgt.n_frames}"
        )
    positions = tgt.positions.copy()
    positions[:, idx] = replacement.positions
    return tgt.with_positions(positions)


def drop_tracks(src: TrackSet, tgt: TrackSet, indices: np.ndarray) -> tuple:
    """Delete tracks from both sides, preserving the remaining order."""
    indices = np.asarray(indices, dtype=np.int64)
    keep = np.setdiff1d(np.arange(src.n_tracks), indices)
    if keep.size == 0:
        raise WouldBeEmpty("dropping these tracks would empty the set")
    return src.take(keep), tgt.take(keep)


def freeze_background(ts: TrackSet, anchor_frame: int) -> TrackSet:
    """Pin every background (object_id 0) track to its anchor-frame position."""
    if not 0 <= anchor_frame < ts.n_frames:
        raise SchemaViolation(f"anchor frame {anchor_frame} outside [0, {ts.n_frames})")
    bg = np.flatnonzero(ts.object_id == 0)
    if bg.size == 0:
        return ts
    positions = ts.positions.copy()
    positions[:, bg] = positions[anchor_frame, bg]
    return ts.with_positions(positions)


# ---------------------------------------------------------------------------
# EditSpec: parse / validate / apply / canonical form


@dataclass(frozen=True)
class EditOp:
    kind: str
    selection: Selection | None
    keyframes: list | None
    params: dict


@dataclass(frozen=True)
class EditSpec:
    ops: tuple

    @staticmethod
    def from_json(doc, base_dir: Path | None = None) -> "EditSpec":
        if isinstance(doc, (str, bytes)):
            try:
                doc = json.loads(doc)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"editspec: invalid JSON ({exc})")
        if not isinstance(doc, dict) or "ops" not in doc:
            raise SchemaViolation("editspec: missing field 'ops'")
        if not isinstance(doc["ops"], list):
            raise SchemaViolation("editspec: field 'ops' must be a list")
        ops = []
        for i, rec in enumerate(doc["ops"]):
            ops.append(_parse_op(rec, f"ops[{i}]", base_dir))
        return EditSpec(tuple(ops))


def _parse_selection(rec, where: str) -> Selection:
    if not isinstance(rec, dict):
        raise SchemaViolation(f"{where}.selection: must be an object")
    if "object_id" in rec:
        return Selection(object_id=int(rec["object_id"]))
    if "indices" in rec:
        return Selection(indices=tuple(int(i) for i in rec["indices"]))
    if "box" in rec:
        b = rec["box"]
        for key in ("frame", "x0", "y0", "x1", "y1"):
            if key not in b:
                raise SchemaViolation(f"{where}.selection.box: missing '{key}'")
        return Selection(
            box=(int(b["frame"]), float(b["x0"]), float(b["y0"]), float(b["x1"]), float(b["y1"]))
        )
    raise SchemaViolation(f"{where}.selection: need one of object_id/indices/box")


def _parse_op(rec: dict, where: str, base_dir: Path | None) -> EditOp:
    if not isinstance(rec, dict) or "kind" not in rec:
        raise SchemaViolation(f"{where}: missing field 'kind'")
    kind = rec["kind"]
    if kind not in EDIT_KINDS:
        raise SchemaViolation(f"{where}.kind: unknown edit kind '{kind}'")
    params = dict(rec.get("params", {}))
    selection = None
    keyframes = None

    if kind in ("rigid", "lbs", "remove", "duplicate", "transfer", "drop"):
        if "selection" not in rec:
            raise SchemaViolation(f"{where}: '{kind}' requires a selection")
        selection = _parse_selection(rec["selection"], where)
    if kind in ("rigid", "duplicate", "camera"):
        keyframes = _parse_keyframes(rec.get("keyframes"), where)
    if kind == "lbs":
        handles = params.get("handles")
        if not isinstance(handles, list) or not handles:
            raise SchemaViolation(f"{where}.params.handles: at least one handle required")
        parsed = []
        for j, h in enumerate(handles):
            hw = f"{where}.params.handles[{j}]"
            hsel = _parse_selection(h.get("selection", {}), hw)
            hkfs = _parse_keyframes(h.get("keyframes"), hw)
            parsed.append((hsel, hkfs))
        params["handles"] = parsed
        if "radius" in params:
            params["radius"] = float(params["radius"])
    if kind == "camera":
        mode = params.get("mode", "relative")
        if mode not in ("relative", "absolute"):
            raise SchemaViolation(f"{where}.params.mode: must be relative|absolute")
        params["mode"] = mode
    if kind == "transfer":
        if "positions" in params:
            pass  # inline replacement positions
        elif "tracks_file" in params:
            path = Path(params["tracks_file"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            params["tracks_path"] = path
        else:
            raise SchemaViolation(f"{where}.params: transfer needs 'positions' or 'tracks_file'")
    if kind == "freeze_background":
        params["anchor_frame"] = int(params.get("anchor_frame", 0))

    return EditOp(kind=kind, selection=selection, keyframes=keyframes, params=params)


def apply_editspec(pair: ClipPair, spec: EditSpec) -> ClipPair:
    """Apply every op in order, each seeing the previous result."""
    src, tgt = pair.source_tracks, pair.target_tracks
    cam_tgt = pair.target_camera
    for op in spec.ops:
        if op.kind == "rigid":
            idx = select_tracks(src, pair.source_camera, op.selection)
            pivot = op.params.get("pivot")
            pivot = None if pivot is None else np.asarray(pivot, dtype=np.float64)
            tgt = apply_rigid_edit(tgt, idx, op.keyframes, pivot)
        elif op.kind == "lbs":
            handles = [
                (select_tracks(src, pair.source_camera, hsel), hkfs)
                for hsel, hkfs in op.params["handles"]
            ]
            tgt = apply_lbs_deform(tgt, handles, op.params.get("radius"))
        elif op.kind == "camera":
            cam_tgt = edit_camera_path(
                cam_tgt, op.keyframes, op.params["mode"], op.params.get("intrinsics")
            )
        elif op.kind == "remove":
            if op.selection.object_id is None:
                raise SchemaViolation("remove requires an object_id selection")
            tgt = remove_object(tgt, op.selection.object_id, cam_tgt)
        elif op.kind == "duplicate":
            if op.selection.object_id is None:
                raise SchemaViolation("duplicate requires an object_id selection")
            src, tgt = duplicate_object(src, tgt, op.selection.object_id, op.keyframes)
        elif op.kind == "transfer":
            if op.selection.object_id is None:
                raise SchemaViolation("transfer requires an object_id selection")
            tgt = transfer_tracks(tgt, op.selection.object_id, _load_replacement(op, tgt))
        elif op.kind == "drop":
            idx = select_tracks(src, pair.source_camera, op.selection)
            src, tgt = drop_tracks(src, tgt, idx)
        elif op.kind == "freeze_background":
            anchor = op.params["anchor_frame"]
            src = freeze_background(src, anchor)
            tgt = freeze_background(tgt, anchor)
    return replace(pair, source_tracks=src, target_tracks=tgt, target_camera=cam_tgt)


def _load_replacement(op: EditOp, tgt: TrackSet) -> TrackSet:
    if "positions" in op.params:
        positions = np.asarray(op.params["positions"], dtype=np.float64)
        if positions.ndim != 3 or positions.shape[2] != 3:
            raise SchemaViolation("transfer positions must be [F][n][3]")
        if positions.shape[0] != tgt.n_frames:
            raise CountMismatch(
                f"replacement has {positions.shape[0]} frames, pair has {tgt.n_frames}"
            )
        return TrackSet.from_positions(positions)
    from .project import read_tracks_json

    return read_tracks_json(op.params["tracks_path"])


# ---------------------------------------------------------------------------
# canonical JSON


def canonical_editspec_json(doc) -> str:
    """Canonical editspec serialization: sorted keys, compact separators,
    integral floats collapsed to ints. The UI and the CLI both emit this
    form, so equal edits hash equal."""
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    return json.dumps(_canonical_value(doc), sort_keys=True, separators=(",", ":"))


def _canonical_value(v):
    if isinstance(v, dict):
        return {k: _canonical_value(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_canonical_value(x) for x in v]
    if isinstance(v, float) and v.is_integer() and abs(v) < 2**53:
        return int(v)
    return v


def editspec_hash(doc) -> str:
    """Content address of an editspec: sha256 of its canonical JSON."""
    return hashlib.sha256(canonical_editspec_json(doc).encode("utf-8")).hexdigest()
