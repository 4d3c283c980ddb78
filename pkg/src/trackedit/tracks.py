"""Track data model: world-space track sets, screen projections, clip pairs.

A TrackSet stores world-space trajectories for N points over F frames.
Projection turns them into normalized screen coordinates plus disparity z,
the coordinate input of the track conditioner. Visibility flags are stored
for bookkeeping but never consumed downstream; occlusion reasoning is the
generative model's job.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeMismatch
from .geometry import CameraPath, DisparityScale, MIN_DEPTH, project_many

FOREGROUND_FRACTION_DEFAULT = 0.7
INFERENCE_TRACK_COUNT = 1000  # default random sample fed to the generator


@dataclass(frozen=True)
class TrackSet:
    """World-space 3D trajectories with per-track object labels.

    positions: (F, N, 3) float64 meters
    object_id: (N,) int, 0 = background
    existence: (F, N) {0,1}; turning a track off signals removal
    visibility: (F, N) {0,1}; stored only, never consumed by the conditioner
    """

    positions: np.ndarray
    object_id: np.ndarray
    existence: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 3 or pos.shape[1] < 1:
            raise ShapeMismatch(f"positions must be (F, N>=1, 3), got {pos.shape}")
        f, n = pos.shape[:2]
        oid = np.asarray(self.object_id, dtype=np.int64)
        ex = np.asarray(self.existence, dtype=np.uint8)
        vis = np.asarray(self.visibility, dtype=np.uint8)
        if oid.shape != (n,):
            raise ShapeMismatch(f"object_id must be ({n},), got {oid.shape}")
        if ex.shape != (f, n):
            raise ShapeMismatch(f"existence must be ({f}, {n}), got {ex.shape}")
        if vis.shape != (f, n):
            raise ShapeMismatch(f"visibility must be ({f}, {n}), got {vis.shape}")
        for name, flags in (("existence", ex), ("visibility", vis)):
            if not np.isin(flags, (0, 1)).all():
                raise ShapeMismatch(f"{name} flags must be 0/1")
        if not np.isfinite(pos).all():
            raise ShapeMismatch("positions must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "object_id", oid)
        object.__setattr__(self, "existence", ex)
        object.__setattr__(self, "visibility", vis)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.positions.shape[1]

    @staticmethod
    def from_positions(positions: np.ndarray, object_id=None) -> "TrackSet":
        positions = np.asarray(positions, dtype=np.float64)
        f, n = positions.shape[:2]
        if object_id is None:
            object_id = np.zeros(n, dtype=np.int64)
        ones = np.ones((f, n), dtype=np.uint8)
        return TrackSet(positions, object_id, ones, ones.copy())

    def take(self, indices: np.ndarray) -> "TrackSet":
        """Subset by track index, preserving order of `indices`."""
        idx = np.asarray(indices, dtype=np.int64)
        return TrackSet(
            self.positions[:, idx],
            self.object_id[idx],
            self.existence[:, idx],
            self.visibility[:, idx],
        )

    def with_positions(self, positions: np.ndarray) -> "TrackSet":
        return replace(self, positions=np.asarray(positions, dtype=np.float64))

    def depth_pool(self, cam: CameraPath) -> np.ndarray:
        """All strictly positive camera-space depths of this set under cam."""
        depths = []
        for k in range(self.n_frames):
            intr, pose = cam[k]
            _, z = project_many(self.positions[k], intr, pose)
            depths.append(z[z > MIN_DEPTH])
        return np.concatenate(depths) if depths else np.empty(0)


@dataclass(frozen=True)
class ProjectedTracks:
    """Screen-space tracks: coords (F, N, 3) = (x/width, y/height, z).

    x and y may exit [0, 1] (off-screen is legal); z is normalized disparity
    in [0, 1]. Deliberately carries no visibility field: the conditioner
    consumes every track regardless of occlusion.
    """

    coords: np.ndarray
    existence: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        e = np.asarray(self.existence, dtype=np.uint8)
        if c.ndim != 3 or c.shape[2] != 3:
            raise ShapeMismatch(f"coords must be (frames, N, 3), got {c.shape}")
        if e.shape != c.shape[:2]:
            raise ShapeMismatch(f"existence must be {c.shape[:2]}, got {e.shape}")
        z = c[..., 2]
        if z.size and (z.min() < -1e-12 or z.max() > 1 + 1e-12):
            raise ShapeMismatch("z must lie in [0, 1]")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "existence", e)

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class VideoClip:
    """Frame stack (F, H, W, 3) with values in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 4 or f.shape[3] != 3:
            raise ShapeMismatch(f"frames must be (F, H, W, 3), got {f.shape}")
        if not np.isfinite(f).all():
            raise ShapeMismatch("frames must be finite")
        object.__setattr__(self, "frames", f)

    @property
    def shape(self):
        return self.frames.shape


@dataclass(frozen=True)
class ClipPair:
    """One editing unit: source clip plus (possibly edited) target motion.

    Source and target track sets are in 1:1 correspondence; the pairing is
    positional, so every track-count-changing operation must touch both.
    """

    source_video: VideoClip
    source_camera: CameraPath
    target_camera: CameraPath
    source_tracks: TrackSet
    target_tracks: TrackSet
    target_video: VideoClip | None = None
    depth_maps: np.ndarray | None = None
    masks: np.ndarray | None = None

    def __post_init__(self):
        f, h, w = self.source_video.shape[:3]
        if len(self.source_camera) != f:
            raise ShapeMismatch(
                f"camera has {len(self.source_camera)} frames, video has {f}"
            )
        if (self.source_camera.width, self.source_camera.height) != (w, h):
            raise ShapeMismatch(
                f"camera frame size {self.source_camera.width}x{self.source_camera.height}"
                f" != video {w}x{h}"
            )
        if self.source_tracks.n_frames != f or self.target_tracks.n_frames != f:
            raise ShapeMismatch("track frame counts must equal the video frame count")
        if self.source_tracks.n_tracks != self.target_tracks.n_tracks:
            raise ShapeMismatch(
                f"paired track counts differ: {self.source_tracks.n_tracks}"
                f" vs {self.target_tracks.n_tracks}"
            )
        if len(self.target_camera) != f:
            raise ShapeMismatch("target camera frame count must equal the video's")
        if self.target_video is not None and self.target_video.shape != self.source_video.shape:
            raise ShapeMismatch("target video shape must match the source video")
        if self.depth_maps is not None:
            d = np.asarray(self.depth_maps, dtype=np.float64)
            if d.shape != (f, h, w):
                raise ShapeMismatch(f"depth maps must be ({f}, {h}, {w}), got {d.shape}")
            object.__setattr__(self, "depth_maps", d)
        if self.masks is not None:
            m = np.asarray(self.masks, dtype=np.int64)
            if m.shape != (f, h, w):
                raise ShapeMismatch(f"masks must be ({f}, {h}, {w}), got {m.shape}")
            object.__setattr__(self, "masks", m)

    @property
    def n_frames(self) -> int:
        return self.source_video.shape[0]

    @property
    def frame_size(self):
        """(width, height) in pixels."""
        f, h, w = self.source_video.shape[:3]
        return w, h

    def disparity_scale(self) -> DisparityScale:
        """Joint normalization constants over source AND target track depths."""
        pool = np.concatenate(
            [
                self.source_tracks.depth_pool(self.source_camera),
                self.target_tracks.depth_pool(self.target_camera),
            ]
        )
        return DisparityScale.from_depths(pool)


# ---------------------------------------------------------------------------
# operations


def project_tracks(tracks: TrackSet, cam: CameraPath, scale: DisparityScale) -> ProjectedTracks:
    """Project a track set to normalized screen coordinates plus disparity z.

    Behind-camera samples get existence 0 and coordinates carried forward
    from the last valid frame (or back from the first valid one), so every
    output coordinate is finite. Existence flags only ever flip 1 -> 0.
    """
    if tracks.n_frames != len(cam):
        raise ShapeMismatch(
            f"track frames {tracks.n_frames} != camera frames {len(cam)}"
        )
    f, n = tracks.n_frames, tracks.n_tracks
    w, h = cam.width, cam.height
    coords = np.zeros((f, n, 3))
    valid = np.zeros((f, n), dtype=bool)
    for k in range(f):
        intr, pose = cam[k]
        xy, depth = project_many(tracks.positions[k], intr, pose)
        ok = depth > MIN_DEPTH
        valid[k] = ok
        coords[k, :, 0] = xy[:, 0] / w
        coords[k, :, 1] = xy[:, 1] / h
        coords[k, :, 2] = np.where(ok, scale.z(np.where(ok, depth, 1.0)), 0.0)

    # carry coordinates over invalid frames
    for j in range(n):
        col = valid[:, j]
        if col.all():
            continue
        if not col.any():
            coords[:, j] = 0.5  # never projectable; park at frame center
            continue
        good = np.flatnonzero(col)
        prev = np.full(f, -1, dtype=np.int64)
        prev[good] = good
        prev = np.maximum.accumulate(prev)
        fill = np.where(prev >= 0, prev, good[0])
        coords[:, j] = coords[fill, j]

    existence = (tracks.existence.astype(bool) & valid).astype(np.uint8)
    return ProjectedTracks(coords, existence)


def temporal_downsample(pt: ProjectedTracks, f_tokens: int) -> ProjectedTracks:
    """Nearest-neighbor downsample to f_tokens frames.

    Token frame k copies source frame round(k*(F-1)/(f-1)); rounding is
    half-up, and f=1 takes frame 0. Values are copied, never interpolated.
    """
    f_src = pt.n_frames
    if not 1 <= f_tokens <= f_src:
        raise ShapeMismatch(f"token frames must lie in [1, {f_src}], got {f_tokens}")
    if f_tokens == f_src:
        return ProjectedTracks(pt.coords.copy(), pt.existence.copy())
    idx = downsample_indices(f_src, f_tokens)
    return ProjectedTracks(pt.coords[idx], pt.existence[idx])


def downsample_indices(f_src: int, f_tokens: int) -> np.ndarray:
    if f_tokens == 1:
        return np.zeros(1, dtype=np.int64)
    k = np.arange(f_tokens, dtype=np.float64)
    return np.floor(k * (f_src - 1) / (f_tokens - 1) + 0.5).astype(np.int64)


def sample_track_indices(
    ts: TrackSet,
    n: int,
    rng: np.random.Generator,
    foreground_fraction: float = FOREGROUND_FRACTION_DEFAULT,
) -> np.ndarray:
    """Deterministic foreground-biased subset of n track indices.

    ceil(foreground_fraction * n) indices come from tracks with
    object_id > 0 when available; the remainder from background. When a
    pool runs short the other pool fills in. Output is sorted, so n == N
    returns the full set in canonical order, and applying the same index
    array to the paired set preserves correspondence.
    """
    total = ts.n_tracks
    if not 1 <= n <= total:
        raise ValueError(f"sample size must lie in [1, {total}], got {n}")
    if n == total:
        return np.arange(total, dtype=np.int64)
    fg_pool = np.flatnonzero(ts.object_id > 0)
    bg_pool = np.flatnonzero(ts.object_id == 0)
    want_fg = min(int(np.ceil(foreground_fraction * n)), n)
    take_fg = min(want_fg, fg_pool.size)
    take_bg = min(n - take_fg, bg_pool.size)
    take_fg = n - take_bg  # backfill from foreground if background is short
    chosen = []
    if take_fg:
        chosen.append(rng.choice(fg_pool, size=take_fg, replace=False))
    if take_bg:
        chosen.append(rng.choice(bg_pool, size=take_bg, replace=False))
    return np.sort(np.concatenate(chosen).astype(np.int64))


def sample_tracks(
    ts: TrackSet,
    n: int,
    rng: np.random.Generator,
    foreground_fraction: float = FOREGROUND_FRACTION_DEFAULT,
) -> TrackSet:
    return ts.take(sample_track_indices(ts, n, rng, foreground_fraction))


def label_tracks_by_mask(ts: TrackSet, masks: np.ndarray, cam: CameraPath) -> TrackSet:
    """Fill object_id by majority mask label over in-frame projections.

    Tracks that never project inside the frame (or only onto label 0) get
    object id 0. Ties resolve to their smallest label.
    """
    masks = np.asarray(masks)
    f, n = ts.n_frames, ts.n_tracks
    w, h = cam.width, cam.height
    votes = np.zeros((n, int(masks.max()) + 1), dtype=np.int64)
    for k in range(f):
        intr, pose = cam[k]
        xy, depth = project_many(ts.positions[k], intr, pose)
        col = np.floor(xy[:, 0]).astype(np.int64)
        row = np.floor(xy[:, 1]).astype(np.int64)
        ok = (depth > MIN_DEPTH) & (col >= 0) & (col < w) & (row >= 0) & (row < h)
        labels = masks[k, row[ok], col[ok]]
        np.add.at(votes, (np.flatnonzero(ok), labels), 1)
    object_id = votes.argmax(axis=1)
    object_id[votes.sum(axis=1) == 0] = 0
    return replace(ts, object_id=object_id.astype(np.int64))
