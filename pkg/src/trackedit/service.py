"""JSON-over-HTTP facade over one loaded project.

Read-mostly: the project is immutable after load; edits are stateless (the
client owns the working editspec and posts it whole), and previews are
cached by the sha256 of the canonical editspec JSON, rendered single-flight
per hash. Frames and previews are PNG; everything else is JSON.
"""

from __future__ import annotations

import io
import threading
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, Field

from .edits import EditSpec, apply_editspec, editspec_hash
from .errors import MissingDepth, TrackEditError
from .metrics import compare_videos
from .preview import render_preview
from .project import load_project
from .tracks import ClipPair, project_tracks


class ProjectInfo(BaseModel):
    F: int
    H: int
    W: int
    N: int
    objects: list[int]
    has_depth: bool


class BranchTracks(BaseModel):
    coords: list  # [frames][tracks][3] normalized (x, y, z)
    existence: list  # [frames][tracks] 0/1


class TracksPayload(BaseModel):
    F: int
    N: int
    width: int
    height: int
    frame_stride: int = 1
    stride: int = 1
    object_id: list[int]
    track_indices: list[int]
    source: BranchTracks
    target: BranchTracks


class EditResponse(BaseModel):
    hash: str
    tracks: TracksPayload


class PreviewResponse(BaseModel):
    hash: str
    frames: int
    cached: bool


class MetricsRequest(BaseModel):
    hash: str
    against: Literal["source", "target"] = Field(default="source")


class SessionState:
    """Immutable project plus a content-addressed preview cache."""

    def __init__(self, pair: ClipPair):
        self.pair = pair
        self.previews: dict[str, dict] = {}
        self._cache_lock = threading.Lock()
        self._hash_locks: dict[str, threading.Lock] = {}

    def hash_lock(self, key: str) -> threading.Lock:
        with self._cache_lock:
            return self._hash_locks.setdefault(key, threading.Lock())


def _png_bytes(frame: np.ndarray, mode: str = "RGB") -> bytes:
    if mode == "RGB":
        data = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    else:
        data = (np.asarray(frame) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def _tracks_payload(pair: ClipPair, stride: int, frame_stride: int) -> TracksPayload:
    scale = pair.disparity_scale()
    src = project_tracks(pair.source_tracks, pair.source_camera, scale)
    tgt = project_tracks(pair.target_tracks, pair.target_camera, scale)
    track_idx = np.arange(0, src.n_tracks, max(1, stride))
    frame_idx = np.arange(0, src.n_frames, max(1, frame_stride))
    w, h = pair.frame_size

    def branch(pt):
        return BranchTracks(
            coords=pt.coords[np.ix_(frame_idx, track_idx)].tolist(),
            existence=pt.existence[np.ix_(frame_idx, track_idx)].astype(int).tolist(),
        )

    return TracksPayload(
        F=len(frame_idx),
        N=len(track_idx),
        width=w,
        height=h,
        frame_stride=max(1, frame_stride),
        stride=max(1, stride),
        object_id=pair.source_tracks.object_id[track_idx].tolist(),
        track_indices=track_idx.tolist(),
        source=branch(src),
        target=branch(tgt),
    )


def create_app(project_path, static_dir: Path | None = None) -> FastAPI:
    """Build the service over a project directory."""
    state = SessionState(load_project(project_path))
    app = FastAPI(title="trackedit service")
    app.state.session = state

    @app.exception_handler(TrackEditError)
    def _domain_error(request: Request, exc: TrackEditError):
        status = 409 if isinstance(exc, MissingDepth) else 400
        return Response(
            content=f'{{"detail": "{type(exc).__name__}: {str(exc)[:300]}"}}'.encode(),
            status_code=status,
            media_type="application/json",
        )

    @app.get("/api/project", response_model=ProjectInfo)
    def project_info():
        pair = state.pair
        f, h, w = pair.source_video.shape[:3]
        return ProjectInfo(
            F=f,
            H=h,
            W=w,
            N=pair.source_tracks.n_tracks,
            objects=sorted(set(int(v) for v in pair.source_tracks.object_id)),
            has_depth=pair.depth_maps is not None,
        )

    @app.get("/api/frame/{index}")
    def frame(index: int):
        pair = state.pair
        if not 0 <= index < pair.n_frames:
            raise HTTPException(404, f"frame {index} outside [0, {pair.n_frames})")
        return Response(content=_png_bytes(pair.source_video.frames[index]), media_type="image/png")

    @app.get("/api/tracks", response_model=TracksPayload)
    def tracks(stride: int = 1, frame_stride: int = 1):
        return _tracks_payload(state.pair, stride, frame_stride)

    @app.post("/api/edit", response_model=EditResponse)
    async def edit(request: Request):
        body = await request.body()
        doc = _parse_editspec_body(body)
        spec = EditSpec.from_json(doc)
        edited = apply_editspec(state.pair, spec)
        return EditResponse(hash=editspec_hash(doc), tracks=_tracks_payload(edited, 1, 1))

    @app.post("/api/preview", response_model=PreviewResponse)
    async def preview(request: Request):
        body = await request.body()
        doc = _parse_editspec_body(body)
        spec = EditSpec.from_json(doc)  # validate before touching the cache
        key = editspec_hash(doc)
        if key in state.previews:
            return PreviewResponse(hash=key, frames=state.pair.n_frames, cached=True)
        with state.hash_lock(key):
            if key not in state.previews:  # single-flight per hash
                clip, coverage = render_preview(state.pair, spec)
                entry = {
                    "video": clip.frames,
                    "coverage": coverage,
                    "frames": [_png_bytes(fr) for fr in clip.frames],
                    "masks": [_png_bytes(cv, mode="L") for cv in coverage],
                }
                with state._cache_lock:
                    state.previews[key] = entry
                return PreviewResponse(hash=key, frames=state.pair.n_frames, cached=False)
        return PreviewResponse(hash=key, frames=state.pair.n_frames, cached=True)

    @app.get("/api/preview/{key}/{index}")
    def preview_frame(key: str, index: int):
        entry = state.previews.get(key)
        if entry is None:
            raise HTTPException(404, f"unknown preview hash {key}")
        if not 0 <= index < len(entry["frames"]):
            raise HTTPException(404, f"frame {index} outside [0, {len(entry['frames'])})")
        return Response(content=entry["frames"][index], media_type="image/png")

    @app.get("/api/preview/{key}/{index}/mask")
    def preview_mask(key: str, index: int):
        entry = state.previews.get(key)
        if entry is None:
            raise HTTPException(404, f"unknown preview hash {key}")
        return Response(content=entry["masks"][index], media_type="image/png")

    @app.post("/api/metrics")
    def metrics(req: MetricsRequest):
        entry = state.previews.get(req.hash)
        if entry is None:
            raise HTTPException(404, f"unknown preview hash {req.hash}")
        pair = state.pair
        if req.against == "target":
            if pair.target_video is None:
                raise HTTPException(404, "project has no target clip")
            reference = pair.target_video.frames
        else:
            reference = pair.source_video.frames
        report = compare_videos(entry["video"], reference, mask=entry["coverage"])
        return report.to_json()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def _parse_editspec_body(body: bytes) -> dict:
    import json

    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise HTTPException(400, f"editspec: invalid JSON ({exc})")
    if not isinstance(doc, dict):
        raise HTTPException(400, "editspec: body must be a JSON object")
    return doc


def default_static_dir() -> Path | None:
    bundled = Path(__file__).parent / "static"
    if bundled.is_dir():
        return bundled
    repo = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if repo.is_dir():
        return repo
    return None
