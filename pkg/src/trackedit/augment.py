"""Training-time track perturbations and clip augmentations.

All ops are pure, seeded functions: a fixed seed reproduces the exact
perturbation, zero-magnitude settings return the input unchanged, and
perturbed-subset sizes never exceed their configured caps (counts are
floored). Track perturbations target the *target* branch of a pair; the
source motion stays the observed truth.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np

from .errors import TooFewTracks, VideoTooShort
from .geometry import DegenerateConfiguration, MIN_DEPTH, fit_homography
from .tracks import ClipPair, ProjectedTracks, TrackSet, VideoClip


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for the perturbation suite; fractions are hard-capped."""

    epipolar_fraction: float = 0.1
    epipolar_sigma: float = 0.05
    homography_fraction: float = 0.1
    homography_jitter_px: float = 3.0
    drift_fraction: float = 0.1
    drift_velocity_range: float = 2.0
    dropout_max: float = 0.5
    overlap_pair_fraction: float = 0.05
    overlap_max: float = 0.5
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        caps = {
            "epipolar_fraction": 0.1,
            "homography_fraction": 0.1,
            "drift_fraction": 0.1,
            "dropout_max": 0.5,
            "overlap_max": 0.5,
            "overlap_pair_fraction": 1.0,
            "flip_prob": 1.0,
        }
        for name, cap in caps.items():
            v = getattr(self, name)
            if not 0.0 <= v <= cap:
                raise ValueError(f"{name} must lie in [0, {cap}], got {v}")
        for name in ("epipolar_sigma", "homography_jitter_px", "drift_velocity_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(doc: dict) -> "AugmentConfig":
        return AugmentConfig(**doc)


def _subset(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    count = int(np.floor(fraction * n))
    if count == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=count, replace=False))


# ---------------------------------------------------------------------------
# 3D: depth jitter along the source viewing ray


def epipolar_jitter(
    pair: ClipPair,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    record: dict | None = None,
) -> TrackSet:
    """Scale the source-camera depth of a seeded target-track subset.

    Each perturbed sample is expressed in the source camera frame of its
    frame, its camera-space vector scaled by Uniform[1-sigma, 1+sigma]
    (which leaves the source projection fixed), and mapped back to world.
    The induced target-camera displacement runs along the epipolar line.
    """
    tgt = pair.target_tracks
    if cfg.epipolar_sigma == 0.0 or cfg.epipolar_fraction == 0.0:
        return tgt
    idx = _subset(rng, tgt.n_tracks, cfg.epipolar_fraction)
    if idx.size == 0:
        return tgt
    positions = tgt.positions.copy()
    factors = rng.uniform(
        1.0 - cfg.epipolar_sigma, 1.0 + cfg.epipolar_sigma, size=(tgt.n_frames, idx.size)
    )
    for k in range(tgt.n_frames):
        _, pose_src = pair.source_camera[k]
        p_cam = pose_src.apply(positions[k, idx])
        ok = p_cam[:, 2] > MIN_DEPTH
        p_cam[ok] *= factors[k, ok, None]
        positions[k, idx[ok]] = pose_src.inverse().apply(p_cam[ok])
    if record is not None:
        record.update(op="epipolar_jitter", indices=idx.tolist(), sigma=cfg.epipolar_sigma)
    return tgt.with_positions(positions)


# ---------------------------------------------------------------------------
# 2D: per-frame homography relative to an anchor frame


def homography_perturb(
    pt: ProjectedTracks,
    cfg: AugmentConfig,
    frame_size,
    rng: np.random.Generator,
    record: dict | None = None,
) -> ProjectedTracks:
    """Warp a seeded track subset by random per-frame homographies.

    One anchor frame stays untouched. For every other frame, four subset
    tracks' anchor positions are jittered by Uniform[-j, j] pixels to form
    correspondences, a homography is fit by the normalized DLT, and applied
    to all subset tracks at that frame. z values never change.
    """
    w, h = frame_size
    n = pt.n_tracks
    idx = _subset(rng, n, cfg.homography_fraction)
    if cfg.homography_fraction > 0.0 and idx.size < 4:
        raise TooFewTracks(
            f"homography perturbation needs >= 4 subset tracks, got {idx.size} of {n}"
        )
    if cfg.homography_jitter_px == 0.0 or idx.size == 0:
        return pt
    anchor = int(rng.integers(pt.n_frames))
    coords = pt.coords.copy()
    anchor_xy = pt.coords[anchor, idx, :2]
    applied = []
    for k in range(pt.n_frames):
        if k == anchor:
            continue
        for _ in range(10):  # retry degenerate draws deterministically
            four = rng.choice(idx.size, size=4, replace=False)
            jitter = rng.uniform(-cfg.homography_jitter_px, cfg.homography_jitter_px, size=(4, 2))
            src = anchor_xy[four]
            dst = src + jitter / np.array([w, h])
            try:
                hom = fit_homography(src, dst)
                break
            except DegenerateConfiguration:
                hom = None
        if hom is None:
            continue
        coords[k, idx, :2] = hom.apply(coords[k, idx, :2])
        applied.append(
            {
                "frame": k,
                "four": idx[four].tolist(),
                "targets": dst.tolist(),
                "homography": hom.matrix.reshape(-1).tolist(),
            }
        )
    if record is not None:
        record.update(
            op="homography_perturb",
            indices=idx.tolist(),
            anchor_frame=anchor,
            jitter_px=cfg.homography_jitter_px,
            frames=applied,
        )
    return ProjectedTracks(coords, pt.existence.copy())


# ---------------------------------------------------------------------------
# 2D: constant velocity drift


def linear_drift(
    pt: ProjectedTracks,
    cfg: AugmentConfig,
    frame_size,
    rng: np.random.Generator,
    record: dict | None = None,
) -> ProjectedTracks:
    """Add one uniform 2D velocity per selected track, anchored at frame 0."""
    if cfg.drift_velocity_range == 0.0 or cfg.drift_fraction == 0.0:
        return pt
    idx = _subset(rng, pt.n_tracks, cfg.drift_fraction)
    if idx.size == 0:
        return pt
    w, h = frame_size
    radius = cfg.drift_velocity_range * np.sqrt(rng.uniform(size=idx.size))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=idx.size)
    vel = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    coords = pt.coords.copy()
    steps = np.arange(pt.n_frames, dtype=np.float64)
    coords[:, idx, 0] += steps[:, None] * vel[None, :, 0] / w
    coords[:, idx, 1] += steps[:, None] * vel[None, :, 1] / h
    if record is not None:
        record.update(op="linear_drift", indices=idx.tolist(), velocities_px=vel.tolist())
    return ProjectedTracks(coords, pt.existence.copy())


# ---------------------------------------------------------------------------
# clips


def frame_dropout(
    video: VideoClip,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    record: dict | None = None,
) -> VideoClip:
    """Zero out a seeded subset of at most dropout_max of the frames."""
    if cfg.dropout_max == 0.0:
        return video
    f = video.shape[0]
    fraction = rng.uniform(0.0, cfg.dropout_max)
    count = int(np.floor(fraction * f))
    if count == 0:
        return video
    dropped = np.sort(rng.choice(f, size=count, replace=False))
    frames = video.frames.copy()
    frames[dropped] = 0.0
    if record is not None:
        record.update(op="frame_dropout", frames=dropped.tolist())
    return VideoClip(frames)


def horizontal_flip(clip: VideoClip, pt: ProjectedTracks):
    """Mirror frame columns and map normalized x to 1 - x.

    Frame data flips bit-exactly; coordinate flips are exact whenever the
    coordinates are dyadic rationals coarser than the result's precision
    (x and 1-x share a representable grid), which covers every fixture in
    the test suite.
    """
    frames = clip.frames[:, :, ::-1, :].copy()
    coords = pt.coords.copy()
    coords[..., 0] = 1.0 - coords[..., 0]
    return VideoClip(frames), ProjectedTracks(coords, pt.existence.copy())


# ---------------------------------------------------------------------------
# clip-pair sampling from a long take


@dataclass(frozen=True)
class ClipSamplingPolicy:
    clip_frames: int
    fps: float = 16.0
    gap_seconds: tuple = (1.0, 5.0)
    overlap_pair_fraction: float = 0.05
    overlap_max: float = 0.5


def sample_clip_pair(
    video: VideoClip,
    tracks: TrackSet,
    camera,
    policy: ClipSamplingPolicy,
    rng: np.random.Generator,
    record: dict | None = None,
) -> ClipPair:
    """Slice two clips from a long take to form a training pair.

    With probability 1 - overlap_pair_fraction the windows are disjoint
    with a gap drawn from gap_seconds; otherwise they overlap by at most
    overlap_max of the clip length. Tracks and cameras slice consistently.
    """
    total = video.shape[0]
    fc = policy.clip_frames
    gap_lo = max(1, int(round(policy.fps * policy.gap_seconds[0])))
    gap_hi = max(gap_lo, int(round(policy.fps * policy.gap_seconds[1])))
    overlap_draw = rng.uniform() < policy.overlap_pair_fraction

    if overlap_draw:
        max_ov = int(np.floor(policy.overlap_max * fc))
        if max_ov < 1 or total < 2 * fc - max_ov:
            raise VideoTooShort(
                f"{total} frames cannot fit two {fc}-frame clips with overlap <= {max_ov}"
            )
        overlap = int(rng.integers(1, max_ov + 1))
        span = 2 * fc - overlap
        start_a = int(rng.integers(0, total - span + 1))
        start_b = start_a + fc - overlap
        gap = -overlap
    else:
        if total < 2 * fc + gap_lo:
            raise VideoTooShort(
                f"{total} frames cannot fit two {fc}-frame clips with gap >= {gap_lo}"
            )
        gap_hi = min(gap_hi, total - 2 * fc)
        gap = int(rng.integers(gap_lo, gap_hi + 1))
        span = 2 * fc + gap
        start_a = int(rng.integers(0, total - span + 1))
        start_b = start_a + fc + gap

    def window(start):
        return slice(start, start + fc)

    wa, wb = window(start_a), window(start_b)
    from .geometry import CameraPath

    pair = ClipPair(
        source_video=VideoClip(video.frames[wa]),
        target_video=VideoClip(video.frames[wb]),
        source_camera=CameraPath(camera.frames[wa]),
        target_camera=CameraPath(camera.frames[wb]),
        source_tracks=TrackSet(
            tracks.positions[wa], tracks.object_id, tracks.existence[wa], tracks.visibility[wa]
        ),
        target_tracks=TrackSet(
            tracks.positions[wb], tracks.object_id, tracks.existence[wb], tracks.visibility[wb]
        ),
    )
    if record is not None:
        record.update(
            op="sample_clip_pair",
            source_start=start_a,
            target_start=start_b,
            gap_frames=gap,
            overlapping=bool(overlap_draw),
        )
    return pair
