"""Procedural desk-scale scene pairs with exact ground truth.

A base scene is a textured background plane plus 1-3 fronto-parallel
colored billboards at distinct depths. Each clip of a pair renders the
same base scene under a different motion script (keyframed billboard
translation/rotation and camera translation), via the pinhole model with
z-buffered plane intersections. Tracks are sampled on billboard surfaces
and the background plane with exact world positions; depth maps, label
masks, and per-frame occlusion-aware visibility come from the same
z-buffer, so every annotation is consistent with the rendered pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, CameraPath, RigidPose
from .tracks import ClipPair, TrackSet, VideoClip

PALETTE = np.array(
    [
        [0.95, 0.15, 0.15],
        [0.15, 0.85, 0.20],
        [0.20, 0.35, 0.95],
        [0.95, 0.85, 0.10],
        [0.90, 0.20, 0.90],
        [0.10, 0.85, 0.85],
        [0.95, 0.55, 0.10],
        [0.60, 0.20, 0.90],
    ]
)


@dataclass(frozen=True)
class ToySceneConfig:
    n_frames: int = 16
    height: int = 32
    width: int = 32
    n_billboards: int = 1
    # boards big and near: their placement must dominate the pixel budget,
    # otherwise motion control contributes too little training signal
    depth_layers: tuple = (1.7, 2.1, 2.5)
    background_depth: float = 6.0
    board_half_size: tuple = (0.4, 0.65)
    motion_extent: float = 0.9
    # per-clip travel bound (meters): placement is drawn over the whole view
    # but motion within a clip stays slow enough for downsampled tracks to
    # represent it
    travel_extent: float = 0.14
    camera_extent: float = 0.12
    n_board_tracks: int = 40
    n_background_tracks: int = 24
    focal_px_factor: float = 0.9
    texture_cells: int = 24
    texture_span_m: float = 5.0

    def __post_init__(self):
        if not 1 <= self.n_billboards <= 3:
            raise ValueError("n_billboards must be 1..3")
        if len(self.depth_layers) < self.n_billboards:
            raise ValueError("need one depth layer per billboard")

    @property
    def focal_px(self) -> float:
        return self.focal_px_factor * self.width

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=self.focal_px,
            fy=self.focal_px,
            cx=self.width / 2.0,
            cy=self.height / 2.0,
            width=self.width,
            height=self.height,
        )

    def view_half_extent(self, depth: float, margin: float = 1.0) -> tuple:
        """Half width/height of the frustum cross-section at a depth."""
        hw = margin * depth * (self.width / 2.0) / self.focal_px
        hh = margin * depth * (self.height / 2.0) / self.focal_px
        return hw, hh


@dataclass(frozen=True)
class Billboard:
    depth: float
    half_w: float
    half_h: float
    color: np.ndarray
    track_offsets: np.ndarray  # (n, 2) local coords in [-1, 1]


@dataclass(frozen=True)
class BaseScene:
    cfg: ToySceneConfig
    boards: tuple
    bg_texture: np.ndarray  # (K, K, 3)
    bg_points: np.ndarray  # (n_bg, 3) world points on the background plane


@dataclass(frozen=True)
class MotionScript:
    """Per-frame board centers/angles and camera positions (already dense)."""

    board_centers: tuple  # per board: (F, 3)
    board_angles: tuple  # per board: (F,)
    camera_positions: np.ndarray  # (F, 3)


def make_base_scene(cfg: ToySceneConfig, rng: np.random.Generator) -> BaseScene:
    colors = PALETTE[rng.choice(len(PALETTE), size=cfg.n_billboards, replace=False)]
    layers = rng.permutation(len(cfg.depth_layers))[: cfg.n_billboards]
    boards = []
    per_board = max(1, cfg.n_board_tracks // cfg.n_billboards)
    for b in range(cfg.n_billboards):
        half_w = rng.uniform(*cfg.board_half_size)
        half_h = rng.uniform(*cfg.board_half_size)
        # keep sampled points away from the rim so visible samples land on
        # interior pixels of the rendered board
        offsets = rng.uniform(-0.85, 0.85, size=(per_board, 2))
        boards.append(
            Billboard(
                depth=float(cfg.depth_layers[layers[b]]),
                half_w=half_w,
                half_h=half_h,
                color=colors[b],
                track_offsets=offsets,
            )
        )
    texture = rng.uniform(0.05, 0.38, size=(cfg.texture_cells, cfg.texture_cells, 3))
    hw, hh = cfg.view_half_extent(cfg.background_depth, margin=1.6)
    n_bg = cfg.n_background_tracks
    bg_points = np.stack(
        [
            rng.uniform(-hw, hw, size=n_bg),
            rng.uniform(-hh, hh, size=n_bg),
            np.full(n_bg, cfg.background_depth),
        ],
        axis=1,
    )
    return BaseScene(cfg=cfg, boards=tuple(boards), bg_texture=texture, bg_points=bg_points)


def make_motion_script(
    base: BaseScene, rng: np.random.Generator, static: bool = False
) -> MotionScript:
    cfg = base.cfg
    f = cfg.n_frames
    frames = np.arange(f, dtype=np.float64)
    key_t = np.array([0.0, (f - 1) / 2.0, f - 1.0])
    centers = []
    angles = []
    for board in base.boards:
        # placement prior: as wide as keeps the whole board in frame, so
        # target positions are hard to guess without the track condition but
        # every board contributes full pixel evidence
        view_w, view_h = cfg.view_half_extent(board.depth)
        pad = 1.0 * board.depth / cfg.focal_px  # ~1 px world-space margin
        # 0.8 of the rotation diagonal: corners may clip slightly, bodies stay
        # on screen, and the placement prior keeps most of its width
        diag = 0.8 * np.hypot(board.half_w, board.half_h)
        hw = max(view_w - diag - pad, 0.15 * view_w)
        hh = max(view_h - diag - pad, 0.15 * view_h)
        if static:
            key_pos = np.tile([0.0, 0.0, board.depth], (3, 1))
            key_ang = np.zeros(3)
        else:
            ext = min(1.0, cfg.motion_extent)
            start = np.array(
                [
                    rng.uniform(-hw, hw) * ext,
                    rng.uniform(-hh, hh) * ext,
                    board.depth + rng.uniform(-0.08, 0.08),
                ]
            )
            deltas = rng.uniform(-cfg.travel_extent, cfg.travel_extent, size=(2, 3))
            deltas[:, 2] *= 0.4
            key_pos = np.stack([start, start + deltas[0], start + deltas[0] + deltas[1]])
            key_pos[:, 0] = np.clip(key_pos[:, 0], -hw, hw)
            key_pos[:, 1] = np.clip(key_pos[:, 1], -hh, hh)
            key_ang = np.cumsum(rng.uniform(-0.15, 0.15, size=3))
        centers.append(
            np.stack([np.interp(frames, key_t, key_pos[:, c]) for c in range(3)], axis=1)
        )
        angles.append(np.interp(frames, key_t, key_ang))
    if static:
        cam = np.zeros((f, 3))
    else:
        cam_end = rng.uniform(-cfg.camera_extent, cfg.camera_extent, size=3)
        cam_end[2] *= 0.3
        cam = np.stack([np.interp(frames, [0.0, f - 1.0], [0.0, cam_end[c]]) for c in range(3)], axis=1)
    return MotionScript(
        board_centers=tuple(centers), board_angles=tuple(angles), camera_positions=cam
    )


def _sample_texture(texture: np.ndarray, x: np.ndarray, y: np.ndarray, span: float) -> np.ndarray:
    """Bilinear, wrap-around texture lookup by world xy coordinates."""
    k = texture.shape[0]
    u = (x / span) % 1.0 * k
    v = (y / span) % 1.0 * k
    u0 = np.floor(u).astype(int) % k
    v0 = np.floor(v).astype(int) % k
    u1 = (u0 + 1) % k
    v1 = (v0 + 1) % k
    fu = (u - np.floor(u))[..., None]
    fv = (v - np.floor(v))[..., None]
    return (
        texture[v0, u0] * (1 - fu) * (1 - fv)
        + texture[v0, u1] * fu * (1 - fv)
        + texture[v1, u0] * (1 - fu) * fv
        + texture[v1, u1] * fu * fv
    )


def render_clip(base: BaseScene, script: MotionScript):
    """Render one clip: (VideoClip, CameraPath, TrackSet, depth, masks)."""
    cfg = base.cfg
    f, h, w = cfg.n_frames, cfg.height, cfg.width
    intr = cfg.intrinsics()
    # pixel-center ray directions in camera coordinates (unit z component)
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dx = (jj - intr.cx) / intr.fx
    dy = (ii - intr.cy) / intr.fy

    frames = np.zeros((f, h, w, 3))
    depth_maps = np.zeros((f, h, w))
    masks = np.zeros((f, h, w), dtype=np.int64)
    poses = []

    n_board_pts = sum(b.track_offsets.shape[0] for b in base.boards)
    n_tracks = n_board_pts + base.bg_points.shape[0]
    positions = np.zeros((f, n_tracks, 3))
    visibility = np.zeros((f, n_tracks), dtype=np.uint8)
    object_id = np.zeros(n_tracks, dtype=np.int64)
    cursor = 0
    for b, board in enumerate(base.boards):
        object_id[cursor : cursor + board.track_offsets.shape[0]] = b + 1
        cursor += board.track_offsets.shape[0]

    for k in range(f):
        origin = script.camera_positions[k]
        pose = RigidPose(np.eye(3), -origin)
        poses.append((intr, pose))

        # background plane (z = background_depth): ray depth is constant
        t_bg = cfg.background_depth - origin[2]
        px = origin[0] + t_bg * dx
        py = origin[1] + t_bg * dy
        frames[k] = _sample_texture(base.bg_texture, px, py, cfg.texture_span_m)
        depth_maps[k] = t_bg
        masks[k] = 0

        for b, board in enumerate(base.boards):
            center = script.board_centers[b][k]
            ang = script.board_angles[b][k]
            ca, sa = np.cos(ang), np.sin(ang)
            t_b = center[2] - origin[2]
            if t_b <= 1e-6:
                continue
            hx = origin[0] + t_b * dx - center[0]
            hy = origin[1] + t_b * dy - center[1]
            # local coordinates in the rotated board frame
            a = (ca * hx + sa * hy) / board.half_w
            bb = (-sa * hx + ca * hy) / board.half_h
            hit = (np.abs(a) <= 1.0) & (np.abs(bb) <= 1.0) & (t_b < depth_maps[k])
            frames[k][hit] = board.color
            depth_maps[k][hit] = t_b
            masks[k][hit] = b + 1

        # ground-truth track positions for this frame
        cursor = 0
        for b, board in enumerate(base.boards):
            n = board.track_offsets.shape[0]
            center = script.board_centers[b][k]
            ang = script.board_angles[b][k]
            ca, sa = np.cos(ang), np.sin(ang)
            local_x = board.track_offsets[:, 0] * board.half_w
            local_y = board.track_offsets[:, 1] * board.half_h
            positions[k, cursor : cursor + n, 0] = center[0] + ca * local_x - sa * local_y
            positions[k, cursor : cursor + n, 1] = center[1] + sa * local_x + ca * local_y
            positions[k, cursor : cursor + n, 2] = center[2]
            cursor += n
        positions[k, cursor:] = base.bg_points

        # visibility from the z-buffer
        p = positions[k]
        z = p[:, 2] - origin[2]
        ok = z > 1e-6
        x_px = intr.fx * (p[:, 0] - origin[0]) / np.where(ok, z, 1.0) + intr.cx
        y_px = intr.fy * (p[:, 1] - origin[1]) / np.where(ok, z, 1.0) + intr.cy
        col = np.floor(x_px).astype(int)
        row = np.floor(y_px).astype(int)
        in_frame = ok & (col >= 0) & (col < w) & (row >= 0) & (row < h)
        vis = np.zeros(n_tracks, dtype=bool)
        idx = np.flatnonzero(in_frame)
        vis[idx] = z[idx] <= depth_maps[k, row[idx], col[idx]] + 1e-6
        visibility[k] = vis.astype(np.uint8)

    tracks = TrackSet(
        positions=positions,
        object_id=object_id,
        existence=np.ones((f, n_tracks), dtype=np.uint8),
        visibility=visibility,
    )
    return VideoClip(frames), CameraPath(tuple(poses)), tracks, depth_maps, masks


def board_center_tracks(cfg: ToySceneConfig, script: MotionScript) -> np.ndarray:
    """Per-frame pixel positions of each board center: (F, n_boards, 2)."""
    intr = cfg.intrinsics()
    out = np.zeros((cfg.n_frames, len(script.board_centers), 2))
    for k in range(cfg.n_frames):
        origin = script.camera_positions[k]
        for b, centers in enumerate(script.board_centers):
            c = centers[k]
            z = c[2] - origin[2]
            out[k, b, 0] = intr.fx * (c[0] - origin[0]) / z + intr.cx
            out[k, b, 1] = intr.fy * (c[1] - origin[1]) / z + intr.cy
    return out


def gen_procedural_pair(seed: int, cfg: ToySceneConfig, static: bool = False):
    """Render two clips of one base scene under different motion scripts.

    Returns (ClipPair, meta). meta holds the board colors and the exact
    per-frame board-center pixel tracks of both clips, the ground truth for
    blob-level motion evaluation. With static=True both scripts freeze, so
    the clips are identical.
    """
    base_rng, src_rng, tgt_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    )
    base = make_base_scene(cfg, base_rng)
    script_src = make_motion_script(base, src_rng, static=static)
    script_tgt = make_motion_script(base, tgt_rng, static=static)
    vid_src, cam_src, tracks_src, depth_src, masks_src = render_clip(base, script_src)
    vid_tgt, cam_tgt, tracks_tgt, _, _ = render_clip(base, script_tgt)
    pair = ClipPair(
        source_video=vid_src,
        target_video=vid_tgt,
        source_camera=cam_src,
        target_camera=cam_tgt,
        source_tracks=tracks_src,
        target_tracks=tracks_tgt,
        depth_maps=depth_src,
        masks=masks_src,
    )
    meta = {
        "seed": seed,
        "board_colors": [b.color.tolist() for b in base.boards],
        "source_centers_px": board_center_tracks(cfg, script_src).tolist(),
        "target_centers_px": board_center_tracks(cfg, script_tgt).tolist(),
    }
    return pair, meta
