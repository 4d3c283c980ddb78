import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trackedit.geometry import CameraIntrinsics, CameraPath, RigidPose
from trackedit.project import save_project
from trackedit.scenes import ToySceneConfig, gen_procedural_pair
from trackedit.tracks import ClipPair, TrackSet, VideoClip


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def simple_intrinsics(width=64, height=48, f=50.0):
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


@pytest.fixture(scope="session")
def toy_pair():
    """Small procedural pair with exact ground truth (session-cached)."""
    pair, meta = gen_procedural_pair(7, ToySceneConfig(n_billboards=2))
    return pair, meta


@pytest.fixture(scope="session")
def toy_pair_single():
    pair, meta = gen_procedural_pair(3, ToySceneConfig(n_billboards=1))
    return pair, meta


def make_simple_pair(n_frames=4, n_tracks=12, seed=0, width=64, height=48):
    """Hand-built pair: static camera, tracks on two depth planes."""
    rng = np.random.default_rng(seed)
    intr = simple_intrinsics(width, height)
    cam = CameraPath.static(intr, RigidPose.identity(), n_frames)
    base = np.zeros((n_tracks, 3))
    base[:, 0] = rng.uniform(-0.4, 0.4, n_tracks)
    base[:, 1] = rng.uniform(-0.3, 0.3, n_tracks)
    base[:, 2] = np.where(np.arange(n_tracks) % 2 == 0, 2.0, 4.0)
    positions = np.repeat(base[None, :, :], n_frames, axis=0)
    drift = rng.normal(scale=0.01, size=(n_frames, n_tracks, 2))
    positions[..., :2] += np.cumsum(drift, axis=0)
    object_id = (np.arange(n_tracks) % 3 == 0).astype(np.int64)  # some foreground
    ones = np.ones((n_frames, n_tracks), dtype=np.uint8)
    tracks = TrackSet(positions, object_id, ones, ones.copy())
    video = VideoClip(rng.uniform(0.1, 0.9, size=(n_frames, height, width, 3)))
    return ClipPair(
        source_video=video,
        source_camera=cam,
        target_camera=cam,
        source_tracks=tracks,
        target_tracks=tracks,
    )


@pytest.fixture
def simple_pair():
    return make_simple_pair()


@pytest.fixture
def project_dir(tmp_path, toy_pair):
    """A full project directory written from the toy pair."""
    pair, _ = toy_pair
    path = tmp_path / "project"
    save_project(pair, path)
    return path
