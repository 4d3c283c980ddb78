"""Point-cloud preview rendering: unproject, edit, z-buffer reproject.

The preview warp is the fast, non-generative approximation of an edit: each
source frame is depth-unprojected to a colored point cloud, the cloud is
moved by the same per-object transforms the edit engine applies to tracks,
and the result is splatted to the edited target camera with single-pixel
footprints and nearest-depth-wins compositing. Uncovered pixels stay black
with coverage 0 so masked metrics can score only warped content.

Cloud-edit semantics: rigid/remove/duplicate ops move whole object labels
(a partial box selection moves the object its tracks belong to); LBS
handles are resolved to track anchor points, so any selection kind works;
camera ops only change the splat viewpoint; drop/transfer/freeze are
track-structural and leave clouds untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .edits import EditSpec, apply_editspec, select_tracks
from .errors import MissingDepth
from .geometry import CameraPath, MIN_DEPTH, project_many, unproject_many
from .tracks import ClipPair, VideoClip

LBS_EPS = 1e-6


@dataclass(frozen=True)
class ColoredPointCloud:
    points: np.ndarray  # (M, 3) world meters
    colors: np.ndarray  # (M, 3) in [0, 1]
    labels: np.ndarray  # (M,) object ids

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "colors", np.asarray(self.colors, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if not np.isfinite(self.points).all():
            raise ValueError("cloud points must be finite")


def unproject_frame(image, depth, camera, masks=None) -> ColoredPointCloud:
    """One colored world point per valid-depth pixel (invalid depth is 0)."""
    intr, pose = camera
    image = np.asarray(image, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    valid = depth > 0
    xy = np.stack([jj[valid], ii[valid]], axis=-1)
    points = unproject_many(xy, depth[valid], intr, pose)
    colors = image[valid]
    labels = np.asarray(masks)[valid] if masks is not None else np.zeros(points.shape[0], np.int64)
    return ColoredPointCloud(points, colors, labels)


# ---------------------------------------------------------------------------
# cloud edits resolved against the pair's tracks


@dataclass(frozen=True)
class ResolvedCloudOp:
    kind: str  # rigid | remove | duplicate | lbs
    object_ids: tuple = ()
    keyframes: tuple = ()
    pivot: np.ndarray | None = None
    handles: tuple = ()  # lbs: ((anchor_points, keyframes, pivot), ...)
    radius: float | None = None


def resolve_cloud_ops(pair: ClipPair, spec: EditSpec):
    """Translate an EditSpec into label-level cloud operations.

    Pivots and LBS handle geometry are taken from the pair's target tracks,
    so cloud edits and track edits agree wherever points coincide.
    """
    ops = []
    tgt = pair.target_tracks
    for op in spec.ops:
        if op.kind == "rigid":
            idx = select_tracks(pair.source_tracks, pair.source_camera, op.selection)
            labels = tuple(sorted(set(int(v) for v in tgt.object_id[idx])))
            anchor = min(max(op.keyframes[0][0], 0), tgt.n_frames - 1)
            pivot = op.params.get("pivot")
            pivot = (
                np.asarray(pivot, dtype=np.float64)
                if pivot is not None
                else tgt.positions[anchor, idx].mean(axis=0)
            )
            ops.append(
                ResolvedCloudOp("rigid", object_ids=labels, keyframes=tuple(op.keyframes), pivot=pivot)
            )
        elif op.kind == "remove":
            ops.append(ResolvedCloudOp("remove", object_ids=(op.selection.object_id,)))
        elif op.kind == "duplicate":
            idx = np.flatnonzero(tgt.object_id == op.selection.object_id)
            anchor = min(max(op.keyframes[0][0], 0), tgt.n_frames - 1)
            pivot = tgt.positions[anchor, idx].mean(axis=0)
            ops.append(
                ResolvedCloudOp(
                    "duplicate",
                    object_ids=(op.selection.object_id,),
                    keyframes=tuple(op.keyframes),
                    pivot=pivot,
                )
            )
        elif op.kind == "lbs":
            handles = []
            first_frames = []
            for hsel, hkfs in op.params["handles"]:
                idx = select_tracks(pair.source_tracks, pair.source_camera, hsel)
                first_frames.append(hkfs[0][0])
                handles.append((idx, hkfs))
            anchor = min(max(min(first_frames), 0), tgt.n_frames - 1)
            resolved = tuple(
                (
                    tgt.positions[anchor, idx],
                    tuple(kfs),
                    tgt.positions[anchor, idx].mean(axis=0),
                )
                for idx, kfs in handles
            )
            radius = op.params.get("radius")
            if radius is None:
                union = np.concatenate([pts for pts, _, _ in resolved])
                radius = 2.0 * float(np.linalg.norm(union - union.mean(axis=0), axis=1).max())
            ops.append(ResolvedCloudOp("lbs", handles=resolved, radius=radius))
        # camera edits change the splat viewpoint; drop/transfer/freeze do not
        # move instantaneous per-frame clouds
    return ops


def _transform_at(keyframes, frame):
    from .geometry import transform_at_frame

    return transform_at_frame(list(keyframes), frame)


def apply_cloud_edit(cloud: ColoredPointCloud, resolved_ops, frame: int) -> ColoredPointCloud:
    """Apply resolved cloud ops to one frame's point cloud."""
    points = cloud.points
    colors = cloud.colors
    labels = cloud.labels
    keep = np.ones(points.shape[0], dtype=bool)
    for op in resolved_ops:
        if op.kind == "rigid":
            sel = np.isin(labels, op.object_ids)
            if sel.any():
                st = _transform_at(op.keyframes, frame)
                points = points.copy()
                points[sel] = st.apply_about(points[sel], op.pivot)
        elif op.kind == "remove":
            keep &= ~np.isin(labels, op.object_ids)
        elif op.kind == "duplicate":
            sel = np.isin(labels, op.object_ids)
            st = _transform_at(op.keyframes, frame)
            points = np.concatenate([points, st.apply_about(points[sel], op.pivot)])
            colors = np.concatenate([colors, colors[sel]])
            labels = np.concatenate([labels, np.full(sel.sum(), labels.max() + 1)])
            keep = np.concatenate([keep, np.ones(sel.sum(), dtype=bool)])
        elif op.kind == "lbs":
            transforms = [(_transform_at(kfs, frame), pts, pivot) for pts, kfs, pivot in op.handles]
            dists = np.stack(
                [
                    np.linalg.norm(points[:, None, :] - pts[None, :, :], axis=2).min(axis=1)
                    for _, pts, _ in transforms
                ],
                axis=1,
            )
            raw = np.where(dists <= op.radius, 1.0 / (dists + LBS_EPS), 0.0)
            total = raw.sum(axis=1)
            moved = total > 0
            if moved.any():
                weights = raw[moved] / total[moved, None]
                disp = np.zeros((int(moved.sum()), 3))
                for hi, (st, _, pivot) in enumerate(transforms):
                    disp += weights[:, hi, None] * (st.apply_about(points[moved], pivot) - points[moved])
                points = points.copy()
                points[moved] = points[moved] + disp
    if not keep.all():
        points, colors, labels = points[keep], colors[keep], labels[keep]
    return ColoredPointCloud(points, colors, labels)


# ---------------------------------------------------------------------------
# splatting


def splat_points(cloud: ColoredPointCloud, camera):
    """Z-buffer splat with single-pixel footprints.

    Nearest depth wins per pixel; equal depths resolve to the lower point
    index. Uncovered pixels are black with coverage 0.
    """
    intr, pose = camera
    h, w = intr.height, intr.width
    image = np.zeros((h, w, 3))
    coverage = np.zeros((h, w), dtype=np.uint8)
    if cloud.points.shape[0] == 0:
        return image, coverage
    xy, depth = project_many(cloud.points, intr, pose)
    col = np.floor(xy[:, 0]).astype(np.int64)
    row = np.floor(xy[:, 1]).astype(np.int64)
    ok = (depth > MIN_DEPTH) & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return image, coverage
    pix = row[idx] * w + col[idx]
    order = np.lexsort((idx, depth[idx], pix))
    pix_sorted = pix[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = idx[order[first]]
    rows, cols = pix_sorted[first] // w, pix_sorted[first] % w
    image[rows, cols] = cloud.colors[winners]
    coverage[rows, cols] = 1
    return image, coverage


def splat_depth(cloud: ColoredPointCloud, camera):
    """Per-pixel winning depth of a splat (inf where uncovered)."""
    intr, pose = camera
    h, w = intr.height, intr.width
    buf = np.full((h, w), np.inf)
    xy, depth = project_many(cloud.points, intr, pose)
    col = np.floor(xy[:, 0]).astype(np.int64)
    row = np.floor(xy[:, 1]).astype(np.int64)
    ok = (depth > MIN_DEPTH) & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    np.minimum.at(buf, (row[ok], col[ok]), depth[ok])
    return buf


def render_preview(pair: ClipPair, spec: EditSpec):
    """Warp the source clip through an edit: (preview VideoClip, coverage).

    Per frame: unproject the source frame by its depth map, apply the
    resolved cloud edits, and splat to the edited target camera. Requires
    depth maps.
    """
    if pair.depth_maps is None:
        raise MissingDepth("preview rendering requires depth maps")
    edited = apply_editspec(pair, spec)
    resolved = resolve_cloud_ops(pair, spec)
    f, height, width = pair.source_video.shape[:3]
    frames = np.zeros((f, height, width, 3))
    coverage = np.zeros((f, height, width), dtype=np.uint8)
    for k in range(f):
        cloud = unproject_frame(
            pair.source_video.frames[k],
            pair.depth_maps[k],
            pair.source_camera[k],
            pair.masks[k] if pair.masks is not None else None,
        )
        cloud = apply_cloud_edit(cloud, resolved, k)
        frames[k], coverage[k] = splat_points(cloud, edited.target_camera[k])
    return VideoClip(frames), coverage
