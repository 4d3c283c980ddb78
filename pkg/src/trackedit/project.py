"""Project directory I/O.

Layout::

    project/
      frames/000000.png ...    8-bit RGB source frames
      camera.json              per-frame source intrinsics + world-to-camera pose
      tracks.json              source track set
      depth/000000.bin|.png    optional: float32 raster or 16-bit PNG millimeters
      masks/000000.png         optional: 8-bit label maps
      target/                  optional: camera.json, tracks.json, frames/

Without a target/ directory the target motion starts as a copy of the
source; edits produce a distinct target. JSON numbers are written with
Python's shortest round-trip repr, so save -> load -> save is byte-stable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MissingFile, SchemaViolation, ShapeMismatch
from .geometry import CameraIntrinsics, CameraPath, RigidPose
from .tracks import ClipPair, TrackSet, VideoClip

DEPTH_MAGIC = b"TFDEPTH1"


# ---------------------------------------------------------------------------
# low-level readers/writers


def read_frame_dir(path: Path) -> np.ndarray:
    files = sorted(path.glob("*.png"))
    if not files:
        raise MissingFile(f"{path}: no PNG frames found")
    frames = []
    for f in files:
        img = np.asarray(Image.open(f).convert("RGB"), dtype=np.float64) / 255.0
        frames.append(img)
    stack = np.stack(frames)
    return stack


def write_frame_dir(path: Path, frames: np.ndarray) -> None:
    path.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.round(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)
    for k in range(data.shape[0]):
        Image.fromarray(data[k], mode="RGB").save(path / f"{k:06d}.png")


def read_depth_dir(path: Path, n_frames: int) -> np.ndarray:
    maps = []
    for k in range(n_frames):
        bin_file = path / f"{k:06d}.bin"
        png_file = path / f"{k:06d}.png"
        if bin_file.exists():
            maps.append(_read_depth_raster(bin_file))
        elif png_file.exists():
            mm = np.asarray(Image.open(png_file), dtype=np.float64)
            maps.append(mm / 1000.0)
        else:
            raise MissingFile(f"{path}: missing depth frame {k:06d} (.bin or .png)")
    return np.stack(maps)


def _read_depth_raster(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != DEPTH_MAGIC:
        raise SchemaViolation(f"{path}: bad depth raster magic")
    w, h = struct.unpack("<II", raw[8:16])
    body = np.frombuffer(raw, dtype="<f4", offset=16)
    if body.size != w * h:
        raise SchemaViolation(f"{path}: depth raster payload is {body.size} floats, expected {w * h}")
    return body.reshape(h, w).astype(np.float64)


def write_depth_dir(path: Path, depth: np.ndarray) -> None:
    path.mkdir(parents=True, exist_ok=True)
    for k in range(depth.shape[0]):
        h, w = depth[k].shape
        payload = DEPTH_MAGIC + struct.pack("<II", w, h)
        payload += depth[k].astype("<f4").tobytes()
        (path / f"{k:06d}.bin").write_bytes(payload)


def read_mask_dir(path: Path, n_frames: int) -> np.ndarray:
    masks = []
    for k in range(n_frames):
        f = path / f"{k:06d}.png"
        if not f.exists():
            raise MissingFile(f"{path}: missing mask frame {k:06d}.png")
        masks.append(np.asarray(Image.open(f).convert("L"), dtype=np.int64))
    return np.stack(masks)


def write_mask_dir(path: Path, masks: np.ndarray) -> None:
    path.mkdir(parents=True, exist_ok=True)
    data = np.asarray(masks)
    if data.min() < 0 or data.max() > 255:
        raise SchemaViolation("mask labels must fit 8-bit PNGs")
    for k in range(data.shape[0]):
        Image.fromarray(data[k].astype(np.uint8), mode="L").save(path / f"{k:06d}.png")


def _require_number(record: dict, key: str, where: str) -> float:
    if key not in record:
        raise SchemaViolation(f"{where}: missing field '{key}'")
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"{where}: field '{key}' is not a number")
    if not np.isfinite(value):
        raise SchemaViolation(f"{where}: field '{key}' is not finite")
    return float(value)


def read_camera_json(path: Path) -> CameraPath:
    if not path.exists():
        raise MissingFile(f"{path}: camera file missing")
    records = json.loads(path.read_text())
    if not isinstance(records, list) or not records:
        raise SchemaViolation(f"{path}: expected a non-empty list of frame records")
    frames = []
    for k, rec in enumerate(records):
        where = f"{path}[{k}]"
        intr = CameraIntrinsics(
            fx=_require_number(rec, "fx", where),
            fy=_require_number(rec, "fy", where),
            cx=_require_number(rec, "cx", where),
            cy=_require_number(rec, "cy", where),
            width=int(_require_number(rec, "width", where)),
            height=int(_require_number(rec, "height", where)),
        )
        r = np.asarray(rec.get("R"), dtype=np.float64)
        t = np.asarray(rec.get("t"), dtype=np.float64)
        if r.shape != (9,):
            raise SchemaViolation(f"{where}: field 'R' must hold 9 row-major numbers")
        if t.shape != (3,):
            raise SchemaViolation(f"{where}: field 't' must hold 3 numbers")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise SchemaViolation(f"{where}: pose values must be finite")
        try:
            pose = RigidPose(r.reshape(3, 3), t)
        except ValueError as exc:
            raise SchemaViolation(f"{where}: {exc}")
        frames.append((intr, pose))
    return CameraPath(tuple(frames))


def write_camera_json(path: Path, cam: CameraPath) -> None:
    records = []
    for intr, pose in cam.frames:
        records.append(
            {
                "fx": intr.fx,
                "fy": intr.fy,
                "cx": intr.cx,
                "cy": intr.cy,
                "width": intr.width,
                "height": intr.height,
                "R": [float(v) for v in pose.rotation.reshape(-1)],
                "t": [float(v) for v in pose.translation],
            }
        )
    path.write_text(json.dumps(records, indent=1) + "\n")


def read_tracks_json(path: Path) -> TrackSet:
    if not path.exists():
        raise MissingFile(f"{path}: tracks file missing")
    doc = json.loads(path.read_text())
    for key in ("F", "N", "positions", "object_id", "existence", "visibility"):
        if key not in doc:
            raise SchemaViolation(f"{path}: missing field '{key}'")
    f, n = int(doc["F"]), int(doc["N"])
    positions = np.asarray(doc["positions"], dtype=np.float64)
    if positions.shape != (f, n, 3):
        raise ShapeMismatch(
            f"{path}: field 'positions' has shape {positions.shape}, expected ({f}, {n}, 3)"
        )
    object_id = np.asarray(doc["object_id"], dtype=np.int64)
    if object_id.shape != (n,):
        raise ShapeMismatch(f"{path}: field 'object_id' has shape {object_id.shape}, expected ({n},)")
    existence = np.asarray(doc["existence"], dtype=np.int64)
    visibility = np.asarray(doc["visibility"], dtype=np.int64)
    for name, arr in (("existence", existence), ("visibility", visibility)):
        if arr.shape != (f, n):
            raise ShapeMismatch(f"{path}: field '{name}' has shape {arr.shape}, expected ({f}, {n})")
    if not np.isfinite(positions).all():
        raise SchemaViolation(f"{path}: field 'positions' contains non-finite values")
    try:
        return TrackSet(positions, object_id, existence, visibility)
    except ShapeMismatch as exc:
        raise SchemaViolation(f"{path}: {exc}")


def write_tracks_json(path: Path, ts: TrackSet) -> None:
    doc = {
        "F": ts.n_frames,
        "N": ts.n_tracks,
        "positions": ts.positions.tolist(),
        "object_id": ts.object_id.tolist(),
        "existence": ts.existence.astype(int).tolist(),
        "visibility": ts.visibility.astype(int).tolist(),
    }
    path.write_text(json.dumps(doc) + "\n")


# ---------------------------------------------------------------------------
# project load/save


def load_project(path) -> ClipPair:
    """Load and validate a project directory into a ClipPair."""
    root = Path(path)
    if not root.is_dir():
        raise MissingFile(f"{root}: project directory does not exist")
    frames_dir = root / "frames"
    if not frames_dir.is_dir():
        raise MissingFile(f"{frames_dir}: frames directory missing")
    video = VideoClip(read_frame_dir(frames_dir))
    n_frames = video.shape[0]
    camera = read_camera_json(root / "camera.json")
    tracks = read_tracks_json(root / "tracks.json")
    if tracks.n_frames != n_frames:
        raise ShapeMismatch(
            f"{root / 'tracks.json'}: field 'F' = {tracks.n_frames}"
            f" does not match the {n_frames} frames in frames/"
        )
    if len(camera) != n_frames:
        raise ShapeMismatch(
            f"{root / 'camera.json'}: {len(camera)} records"
            f" do not match the {n_frames} frames in frames/"
        )

    depth = None
    if (root / "depth").is_dir():
        depth = read_depth_dir(root / "depth", n_frames)
    masks = None
    if (root / "masks").is_dir():
        masks = read_mask_dir(root / "masks", n_frames)

    target_dir = root / "target"
    target_video = None
    if target_dir.is_dir():
        target_camera = read_camera_json(target_dir / "camera.json")
        target_tracks = read_tracks_json(target_dir / "tracks.json")
        if (target_dir / "frames").is_dir():
            target_video = VideoClip(read_frame_dir(target_dir / "frames"))
    else:
        target_camera = camera
        target_tracks = tracks

    return ClipPair(
        source_video=video,
        source_camera=camera,
        target_camera=target_camera,
        source_tracks=tracks,
        target_tracks=target_tracks,
        target_video=target_video,
        depth_maps=depth,
        masks=masks,
    )


def save_project(pair: ClipPair, path) -> None:
    """Write a ClipPair as a project directory (see module docstring)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_frame_dir(root / "frames", pair.source_video.frames)
    write_camera_json(root / "camera.json", pair.source_camera)
    write_tracks_json(root / "tracks.json", pair.source_tracks)
    if pair.depth_maps is not None:
        write_depth_dir(root / "depth", pair.depth_maps)
    if pair.masks is not None:
        write_mask_dir(root / "masks", pair.masks)
    target_dir = root / "target"
    target_dir.mkdir(exist_ok=True)
    write_camera_json(target_dir / "camera.json", pair.target_camera)
    write_tracks_json(target_dir / "tracks.json", pair.target_tracks)
    if pair.target_video is not None:
        write_frame_dir(target_dir / "frames", pair.target_video.frames)
