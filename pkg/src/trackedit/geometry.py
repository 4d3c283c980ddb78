"""Pinhole camera math, rigid/similarity transforms, and homography fitting.

Conventions used throughout the package:

* Poses are stored world-to-camera: ``p_cam = R @ p_world + t``.
* Pixel coordinates are continuous; pixel (row i, col j) covers
  ``[j, j+1) x [i, i+1)`` and has center ``(j + 0.5, i + 0.5)``.
* All camera math is double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    NonPositiveDepth,
)

MIN_DEPTH = 1e-9
ORTHO_TOL = 1e-9

# Disparity range for z-normalization is clipped at these percentiles so a
# handful of outlier depths from noisy estimators cannot stretch the scale.
DISPARITY_PCT_LO = 1.0
DISPARITY_PCT_HI = 99.0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} frame"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


def _check_rotation(rotation: np.ndarray) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
    if not np.allclose(rotation.T @ rotation, np.eye(3), atol=ORTHO_TOL):
        raise ValueError("rotation is not orthonormal within 1e-9")
    if abs(np.linalg.det(rotation) - 1.0) > ORTHO_TOL:
        raise ValueError("rotation determinant is not +1 within 1e-9")
    return rotation


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera rigid transform: ``p_cam = rotation @ p_world + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Return the pose mapping ``p -> self(other(p))``."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class CameraPath:
    """Per-frame (intrinsics, pose) trajectory; all frames share width/height."""

    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise ValueError("camera path needs at least one frame")
        w, h = frames[0][0].width, frames[0][0].height
        for k, (intr, _) in enumerate(frames):
            if intr.width != w or intr.height != h:
                raise ValueError(
                    f"frame {k} size {intr.width}x{intr.height} differs from {w}x{h}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, k: int):
        return self.frames[k]

    @property
    def width(self) -> int:
        return self.frames[0][0].width

    @property
    def height(self) -> int:
        return self.frames[0][0].height

    @staticmethod
    def static(intr: CameraIntrinsics, pose: RigidPose, n_frames: int) -> "CameraPath":
        return CameraPath(tuple((intr, pose) for _ in range(n_frames)))


@dataclass(frozen=True)
class SimilarityTransform:
    """Scaled rigid transform: ``p -> scale * rotation @ p + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, np.eye(3), np.zeros(3))

    def is_identity(self) -> bool:
        return (
            self.scale == 1.0
            and np.array_equal(self.rotation, np.eye(3))
            and not self.translation.any()
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        # Pure translation short-circuits so translation-only edits stay
        # bit-exact (no pivot round trip through floating point).
        if self.scale == 1.0 and np.array_equal(self.rotation, np.eye(3)):
            if not self.translation.any():
                return points.copy()
            return points + self.translation
        return self.scale * (points @ self.rotation.T) + self.translation

    def apply_about(self, points: np.ndarray, pivot: np.ndarray) -> np.ndarray:
        """Apply the transform about a pivot point instead of the origin."""
        if self.scale == 1.0 and np.array_equal(self.rotation, np.eye(3)):
            return self.apply(points)  # pivot cancels for pure translations
        points = np.asarray(points, dtype=np.float64)
        pivot = np.asarray(pivot, dtype=np.float64).reshape(3)
        return self.scale * ((points - pivot) @ self.rotation.T) + pivot + self.translation


# ---------------------------------------------------------------------------
# projection / unprojection


def project(p, intr: CameraIntrinsics, pose: RigidPose):
    """Project one world point to (x_px, y_px, depth_m).

    Raises BehindCamera when the camera-space depth is <= 1e-9. The result
    may lie outside the frame bounds; off-screen projections are legal.
    """
    p_cam = pose.apply(np.asarray(p, dtype=np.float64).reshape(3))
    z = p_cam[2]
    if z <= MIN_DEPTH:
        raise BehindCamera(f"point has camera-space depth {z:.3e} <= {MIN_DEPTH}")
    x = intr.fx * (p_cam[0] / z) + intr.cx
    y = intr.fy * (p_cam[1] / z) + intr.cy
    return x, y, z


def project_many(points: np.ndarray, intr: CameraIntrinsics, pose: RigidPose):
    """Vectorized projection of (..., 3) world points.

    Returns (xy, depth) where xy has shape (..., 2). No behind-camera check
    is made: entries with depth <= MIN_DEPTH carry unusable xy values and
    must be masked by the caller.
    """
    p_cam = pose.apply(points)
    z = p_cam[..., 2]
    safe = np.where(np.abs(z) > MIN_DEPTH, z, 1.0)
    x = intr.fx * (p_cam[..., 0] / safe) + intr.cx
    y = intr.fy * (p_cam[..., 1] / safe) + intr.cy
    return np.stack([x, y], axis=-1), z


def unproject(x: float, y: float, depth: float, intr: CameraIntrinsics, pose: RigidPose):
    """Invert ``project``: pixel coordinates + depth back to a world point."""
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    p_cam = np.array(
        [depth * (x - intr.cx) / intr.fx, depth * (y - intr.cy) / intr.fy, depth]
    )
    return pose.inverse().apply(p_cam)


def unproject_many(xy: np.ndarray, depth: np.ndarray, intr: CameraIntrinsics, pose: RigidPose):
    """Vectorized ``unproject`` for (..., 2) pixels and (...,) depths."""
    xy = np.asarray(xy, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    p_cam = np.stack(
        [
            depth * (xy[..., 0] - intr.cx) / intr.fx,
            depth * (xy[..., 1] - intr.cy) / intr.fy,
            depth,
        ],
        axis=-1,
    )
    return pose.inverse().apply(p_cam)


# ---------------------------------------------------------------------------
# disparity normalization


@dataclass(frozen=True)
class DisparityScale:
    """Shared disparity normalization constants for one clip pair.

    Both branches of a pair must use a single scale so their z values are
    mutually comparable.
    """

    d_min: float
    d_max: float

    @staticmethod
    def from_depths(depths: np.ndarray) -> "DisparityScale":
        depths = np.asarray(depths, dtype=np.float64).reshape(-1)
        if depths.size == 0:
            return DisparityScale(0.0, 0.0)
        if not np.all(depths > 0):
            raise NonPositiveDepth("disparity scale requires strictly positive depths")
        disp = 1.0 / depths
        lo = float(np.percentile(disp, DISPARITY_PCT_LO))
        hi = float(np.percentile(disp, DISPARITY_PCT_HI))
        return DisparityScale(lo, hi)

    def z(self, depths: np.ndarray) -> np.ndarray:
        """Map positive depths to normalized disparity z in [0, 1].

        Nearer points get larger z. When the scale is degenerate (all the
        pool's depths equal) every z maps to 0.5, the center of the range.
        """
        depths = np.asarray(depths, dtype=np.float64)
        span = self.d_max - self.d_min
        if span <= 1e-15:
            return np.full(depths.shape, 0.5)
        z = (1.0 / depths - self.d_min) / span
        return np.clip(z, 0.0, 1.0)


def normalize_disparity(depths: np.ndarray) -> np.ndarray:
    """Normalize a pool of positive depths to z in [0, 1] in disparity space."""
    depths = np.asarray(depths, dtype=np.float64)
    if not np.all(depths > 0):
        raise NonPositiveDepth("all depths must be positive")
    return DisparityScale.from_depths(depths).z(depths)


# ---------------------------------------------------------------------------
# homography


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, normalized so H[2,2] == 1 when nonzero."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        if np.linalg.cond(m) > 1e13:
            raise DegenerateConfiguration("homography matrix is not invertible")
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (..., 2) points through the homography."""
        points = np.asarray(points, dtype=np.float64)
        ph = np.concatenate([points, np.ones(points.shape[:-1] + (1,))], axis=-1)
        out = ph @ self.matrix.T
        return out[..., :2] / out[..., 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity T bringing the centroid to 0 and mean distance to sqrt(2)."""
    c = pts.mean(axis=0)
    dist = np.linalg.norm(pts - c, axis=1).mean()
    s = np.sqrt(2.0) / dist if dist > 1e-15 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def fit_homography(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Fit the homography mapping src -> dst via the normalized DLT.

    Needs >= 4 correspondences with no three source points collinear.
    Raises DegenerateConfiguration when the linear system is rank-deficient.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape[0] < 4 or src.shape != dst.shape:
        raise ValueError(f"need >= 4 matched pairs, got {src.shape} vs {dst.shape}")

    t_src = _hartley_normalization(src)
    t_dst = _hartley_normalization(dst)
    sn = src @ t_src[:2, :2].T + t_src[:2, 2]
    dn = dst @ t_dst[:2, :2].T + t_dst[:2, 2]

    rows = []
    for (x, y), (u, v) in zip(sn, dn):
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
        rows.append([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u])
    a = np.asarray(rows)

    _, sv, vt = np.linalg.svd(a)
    # With n pairs the system has rank 8 in the generic case; a second
    # vanishing singular value means the configuration is degenerate.
    if sv[0] <= 0 or sv[-2] / sv[0] < 1e-10:
        raise DegenerateConfiguration("DLT system is rank-deficient")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    try:
        return Homography(h)
    except DegenerateConfiguration:
        raise
    except ValueError as exc:  # pragma: no cover - shape is fixed above
        raise DegenerateConfiguration(str(exc))


# ---------------------------------------------------------------------------
# quaternions and keyframe interpolation


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix, w >= 0."""
    r = np.asarray(r, dtype=np.float64)
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(r[i, i] - r[j, j] - r[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def matrix_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for a (w, x, y, z) quaternion (normalized internally)."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def slerp(qa: np.ndarray, qb: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb, dot = -qb, -dot
    if dot > 1.0 - 1e-12:
        q = (1.0 - t) * qa + t * qb
        return q / np.linalg.norm(q)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    q = (np.sin((1.0 - t) * theta) / sin_theta) * qa + (np.sin(t * theta) / sin_theta) * qb
    return q / np.linalg.norm(q)


def interpolate_transform(
    a: SimilarityTransform,
    fa: float,
    b: SimilarityTransform,
    fb: float,
    f: float,
) -> SimilarityTransform:
    """Interpolate two keyframed similarity transforms at frame f.

    Translation and log-scale are linear in f; rotation uses shortest-arc
    quaternion slerp. Endpoints return the keyframe transforms themselves.
    """
    if not fa <= f <= fb:
        raise ValueError(f"frame {f} outside keyframe interval [{fa}, {fb}]")
    if f == fa or fa == fb:
        return a
    if f == fb:
        return b
    t = (f - fa) / (fb - fa)
    scale = float(np.exp((1.0 - t) * np.log(a.scale) + t * np.log(b.scale)))
    rot = matrix_from_quat(slerp(quat_from_matrix(a.rotation), quat_from_matrix(b.rotation), t))
    trans = (1.0 - t) * a.translation + t * b.translation
    return SimilarityTransform(scale, rot, trans)


def transform_at_frame(keyframes, f: float) -> SimilarityTransform:
    """Evaluate a sorted list of (frame, SimilarityTransform) keyframes at f.

    Frames before the first keyframe clamp to it, frames after the last
    clamp to the last.
    """
    if not keyframes:
        raise ValueError("at least one keyframe required")
    frames = [kf[0] for kf in keyframes]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ValueError("keyframe frames must be strictly increasing")
    if f <= frames[0]:
        return keyframes[0][1]
    if f >= frames[-1]:
        return keyframes[-1][1]
    hi = int(np.searchsorted(frames, f, side="right"))
    (fa, a), (fb, b) = keyframes[hi - 1], keyframes[hi]
    return interpolate_transform(a, fa, b, fb, f)
