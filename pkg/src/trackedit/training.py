"""Rectified-flow toy training: patchify, flow interpolation, a small
full-attention denoiser over the conditioned token sequence, an Adam loop,
and Euler-integration sampling.

The generative stand-in works in pixel-patch token space (no VAE): videos
are losslessly patchified, the flow interpolates between clean target
tokens and Gaussian noise, and the denoiser regresses the straight-line
velocity on the target half of the conditioned sequence. Zeroing the track
tokens (`condition_tracks=False`) gives the conditioning ablation model
under an otherwise identical budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from functools import lru_cache

from .conditioner import (
    ConditionerConfig,
    PosEncConfig,
    _temporal_block,
    condition_tokens,
    conditioner_grids,
    init_conditioner_params,
    posenc4,
)
from .errors import IndivisibleDims, ShapeMismatch
from .params import ParamStore, uniform_init
from .scenes import ToySceneConfig, gen_procedural_pair
from .tracks import (
    ClipPair,
    ProjectedTracks,
    VideoClip,
    project_tracks,
    sample_track_indices,
    temporal_downsample,
)

# ---------------------------------------------------------------------------
# patchify


def patchify(video: np.ndarray, patch) -> np.ndarray:
    """Lossless rearrangement (F, H, W, 3) -> (f, h, w, pt*ph*pw*3)."""
    video = np.asarray(video)
    pt, ph, pw = patch
    f_px, h_px, w_px = video.shape[:3]
    if f_px % pt or h_px % ph or w_px % pw:
        raise IndivisibleDims(
            f"video dims ({f_px}, {h_px}, {w_px}) not divisible by patch {patch}"
        )
    f, h, w = f_px // pt, h_px // ph, w_px // pw
    x = video.reshape(f, pt, h, ph, w, pw, 3)
    x = x.transpose(0, 2, 4, 1, 3, 5, 6)
    return x.reshape(f, h, w, pt * ph * pw * 3)


def unpatchify(tokens: np.ndarray, patch) -> np.ndarray:
    """Exact inverse of patchify."""
    tokens = np.asarray(tokens)
    pt, ph, pw = patch
    f, h, w, d = tokens.shape
    if d != pt * ph * pw * 3:
        raise IndivisibleDims(f"token width {d} != {pt}*{ph}*{pw}*3")
    x = tokens.reshape(f, h, w, pt, ph, pw, 3)
    x = x.transpose(0, 3, 1, 4, 2, 5, 6)
    return x.reshape(f * pt, h * ph, w * pw, 3)


# ---------------------------------------------------------------------------
# rectified flow


@dataclass(frozen=True)
class FlowState:
    """Linear interpolant state at flow time t (t=0 data, t=1 noise)."""

    t: float
    x_t: np.ndarray
    epsilon: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"flow time must lie in [0, 1], got {self.t}")


def flow_interpolate(x0: np.ndarray, eps: np.ndarray, t: float) -> FlowState:
    """x_t = (1-t) x0 + t eps; the regression target is eps - x0."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"flow time must lie in [0, 1], got {t}")
    if t == 0.0:
        x_t = np.array(x0, copy=True)
    elif t == 1.0:
        x_t = np.array(eps, copy=True)
    else:
        x_t = (1.0 - t) * x0 + t * eps
    return FlowState(t=t, x_t=x_t, epsilon=np.asarray(eps))


def flow_velocity_target(x0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    return eps - x0


# ---------------------------------------------------------------------------
# denoiser


@dataclass(frozen=True)
class DenoiserConfig:
    d: int = 128
    heads: int = 4
    n_blocks: int = 2
    ff_mult: int = 4
    patch: tuple = (2, 4, 4)
    # initial patch-embed gain; < 1 keeps raw-noise tokens from drowning the
    # additive track tokens early in training
    embed_gain: float = 0.25

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if not 2 <= self.n_blocks <= 4:
            raise ValueError("denoiser uses 2..4 transformer blocks")

    @property
    def d_raw(self) -> int:
        pt, ph, pw = self.patch
        return pt * ph * pw * 3


def init_denoiser_params(cfg: DenoiserConfig, seed: int, dtype=np.float64) -> ParamStore:
    rng = np.random.default_rng(seed)
    p = ParamStore()
    d = cfg.d
    p.add("embed", cfg.embed_gain * uniform_init(rng, (cfg.d_raw, d), dtype))
    p.add("time.proj", uniform_init(rng, (d, d), dtype))
    for i in range(cfg.n_blocks):
        p.add(f"block.{i}.ln1", np.ones(d, dtype=dtype))
        for name in ("wq", "wk", "wv", "wo"):
            p.add(f"block.{i}.{name}", uniform_init(rng, (d, d), dtype))
        p.add(f"block.{i}.ln2", np.ones(d, dtype=dtype))
        p.add(f"block.{i}.ff1", uniform_init(rng, (d, cfg.ff_mult * d), dtype))
        p.add(f"block.{i}.ff2", uniform_init(rng, (cfg.ff_mult * d, d), dtype))
    p.add("final_ln", np.ones(d, dtype=dtype))
    p.add("unembed", uniform_init(rng, (d, cfg.d_raw), dtype))
    p.add("unembed_bias", np.zeros(cfg.d_raw, dtype=dtype))
    return p


@lru_cache(maxsize=16)
def _sequence_position_code(f: int, h: int, w: int, d: int) -> np.ndarray:
    """Fixed sinusoidal code of (x, y, frame, branch) per sequence token."""
    pe_cfg = PosEncConfig(d_head=d, heads=1)
    ks, is_, js = np.meshgrid(
        np.arange(f, dtype=np.float64),
        np.arange(h, dtype=np.float64),
        np.arange(w, dtype=np.float64),
        indexing="ij",
    )
    x = (js + 0.5) / w
    y = (is_ + 0.5) / h
    fr = (ks + 0.5) / f
    per_branch = [posenc4(x, y, fr, b / 2.0, pe_cfg).reshape(f * h * w, d) for b in (0, 1)]
    return np.concatenate(per_branch, axis=0)


def _time_code(t, d: int) -> np.ndarray:
    """(..., d) sinusoidal code of flow time; t may be scalar or (B,)."""
    pe_cfg = PosEncConfig(d_head=d, heads=1)
    return posenc4(t, 0.0, 0.0, 0.0, pe_cfg)


def denoiser_forward(
    cond_seq,
    t,
    params: ParamStore,
    cfg: DenoiserConfig,
    token_shape,
) -> Tensor:
    """Predict the velocity grid for the target half of a conditioned sequence.

    Fixed sinusoidal position and time codes are added to the 2*f*h*w token
    sequence, the transformer blocks run full attention over it, and only
    the target-half tokens are unembedded to raw patch-token width. Leading
    batch dims pass through; t is then a matching (B,) array.
    """
    f, h, w = token_shape
    seq = cond_seq if isinstance(cond_seq, Tensor) else ag.const(cond_seq)
    n_half = f * h * w
    if seq.shape[-2:] != (2 * n_half, cfg.d):
        raise ShapeMismatch(
            f"conditioned sequence is {seq.shape}, expected (..., {2 * n_half}, {cfg.d})"
        )
    lead = seq.shape[:-2]
    pos = ag.const(_sequence_position_code(f, h, w, cfg.d), seq.dtype)
    if lead:
        t_arr = np.asarray(t, dtype=np.float64).reshape(lead[0], 1)
    else:
        t_arr = np.asarray([float(t)])
    time_vec = ag.const(_time_code(t_arr, cfg.d), seq.dtype)
    x = ag.add(ag.add(seq, pos), ag.matmul(time_vec, params["time.proj"]))
    for i in range(cfg.n_blocks):
        x = _temporal_block(x, params, f"block.{i}", cfg.heads)
    x = ag.layer_norm(x, params["final_ln"])
    tgt = ag.getitem(x, (Ellipsis, slice(n_half, 2 * n_half), slice(None)))
    v = ag.add(ag.matmul(tgt, params["unembed"]), params["unembed_bias"])
    return ag.reshape(v, (*lead, f, h, w, cfg.d_raw))


def embed_tokens(raw, params: ParamStore) -> Tensor:
    raw = raw if isinstance(raw, Tensor) else ag.const(raw, params["embed"].dtype)
    return ag.matmul(raw, params["embed"])


def predict_velocity(
    x_src_raw: np.ndarray,
    x_t_raw: np.ndarray,
    t,
    pt_src: ProjectedTracks,
    pt_tgt: ProjectedTracks,
    cond_params: ParamStore,
    den_params: ParamStore,
    ccfg: ConditionerConfig,
    dcfg: DenoiserConfig,
    condition_tracks: bool = True,
) -> Tensor:
    """Full model on one pair: embed -> condition with track tokens -> denoise."""
    return _predict_velocity_arrays(
        x_src_raw, x_t_raw, t,
        pt_src.coords, pt_src.existence, pt_tgt.coords, pt_tgt.existence,
        cond_params, den_params, ccfg, dcfg, condition_tracks,
    )


def _predict_velocity_arrays(
    x_src_raw, x_t_raw, t,
    coords_src, exist_src, coords_tgt, exist_tgt,
    cond_params, den_params, ccfg, dcfg, condition_tracks=True,
) -> Tensor:
    """Array core; leading batch dims (with t as a (B,) array) pass through."""
    f, h, w = np.shape(x_src_raw)[-4:-1]
    x_src = embed_tokens(x_src_raw, den_params)
    x_t = embed_tokens(x_t_raw, den_params)
    if condition_tracks:
        trk_src, trk_tgt = conditioner_grids(
            x_src, coords_src, exist_src, coords_tgt, exist_tgt, cond_params, ccfg
        )
    else:
        zeros = np.zeros(x_src.shape, dtype=x_src.dtype)
        trk_src = ag.const(zeros)
        trk_tgt = ag.const(zeros)
    seq = condition_tokens(x_src, x_t, trk_src, trk_tgt)
    return denoiser_forward(seq, t, den_params, dcfg, (f, h, w))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard adaptive-moment optimizer over one or more ParamStores."""

    def __init__(self, stores, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.tensors = [t for store in stores for t in store.tensors()]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]

    def step(self):
        self.step_count += 1
        b1t = 1.0 - self.b1**self.step_count
        b2t = 1.0 - self.b2**self.step_count
        for i, t in enumerate(self.tensors):
            if t.grad is None:
                continue
            g = t.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grads(self):
        for t in self.tensors:
            t.grad = None


# ---------------------------------------------------------------------------
# dataset preparation


@dataclass
class PreparedSample:
    """One pair, fully preprocessed for the training loop."""

    x_src: np.ndarray  # (f, h, w, d_raw)
    x0: np.ndarray  # clean target tokens
    pt_src: ProjectedTracks  # f token frames
    pt_tgt: ProjectedTracks
    target_centers_px: np.ndarray  # (F, n_boards, 2) ground truth
    board_colors: np.ndarray  # (n_boards, 3)


def prepare_sample(
    pair: ClipPair,
    meta: dict,
    patch,
    n_tracks: int,
    rng: np.random.Generator,
    dtype=np.float64,
    foreground_fraction: float = 0.85,
) -> PreparedSample:
    scale = pair.disparity_scale()
    idx = sample_track_indices(
        pair.source_tracks,
        min(n_tracks, pair.source_tracks.n_tracks),
        rng,
        foreground_fraction=foreground_fraction,
    )
    src = pair.source_tracks.take(idx)
    tgt = pair.target_tracks.take(idx)
    f_tokens = pair.n_frames // patch[0]
    pt_src = temporal_downsample(project_tracks(src, pair.source_camera, scale), f_tokens)
    pt_tgt = temporal_downsample(project_tracks(tgt, pair.target_camera, scale), f_tokens)
    return PreparedSample(
        x_src=patchify(pair.source_video.frames, patch).astype(dtype),
        x0=patchify(pair.target_video.frames, patch).astype(dtype),
        pt_src=pt_src,
        pt_tgt=pt_tgt,
        target_centers_px=np.asarray(meta["target_centers_px"]),
        board_colors=np.asarray(meta["board_colors"]),
    )


def build_toy_dataset(
    scene_cfg: ToySceneConfig,
    n_pairs: int,
    seed: int,
    patch,
    n_tracks: int,
    dtype=np.float64,
    seed_offset: int = 0,
    foreground_fraction: float = 0.85,
):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]).generate_state(1)[0])
    samples = []
    for i in range(n_pairs):
        pair, meta = gen_procedural_pair(seed * 1_000_003 + seed_offset + i, scene_cfg)
        samples.append(
            prepare_sample(pair, meta, patch, n_tracks, rng, dtype,
                           foreground_fraction=foreground_fraction)
        )
    return samples


# ---------------------------------------------------------------------------
# blob-center evaluation


def detect_blob_centers(frames: np.ndarray, colors: np.ndarray) -> np.ndarray:
    """Soft color-matched centroid of each blob per frame: (F, K, 2) pixels.

    Falls back to the frame center when a color finds no support, which
    penalizes broken generations without producing NaNs.
    """
    f, h, w, _ = frames.shape
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    out = np.zeros((f, len(colors), 2))
    for k in range(f):
        for c, color in enumerate(np.asarray(colors)):
            dist = np.linalg.norm(frames[k] - color, axis=-1)
            wgt = np.exp(-((dist / 0.25) ** 2))
            total = wgt.sum()
            if total < 1e-6:
                out[k, c] = (w / 2.0, h / 2.0)
            else:
                out[k, c, 0] = (wgt * jj).sum() / total
                out[k, c, 1] = (wgt * ii).sum() / total
    return out


def blob_epe(generated: np.ndarray, sample: PreparedSample) -> float:
    """Mean pixel error between detected and ground-truth blob centers."""
    est = detect_blob_centers(generated, sample.board_colors)
    gt = sample.target_centers_px
    return float(np.linalg.norm(est - gt, axis=-1).mean())


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    n_tracks: int = 48
    condition_tracks: bool = True
    dtype: str = "float64"
    sample_steps: int = 8
    val_every: int = 1
    val_pairs: int = 8
    # extra sampling mass near t=1, where generation starts and x_t carries
    # no information of its own
    t_high_fraction: float = 0.35
    foreground_fraction: float = 0.85

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def _stack_batch(samples, indices, dtype):
    """Stack prepared samples into batched arrays for one graph."""
    xs = np.stack([samples[i].x_src for i in indices]).astype(dtype, copy=False)
    x0 = np.stack([samples[i].x0 for i in indices]).astype(dtype, copy=False)
    cs = np.stack([samples[i].pt_src.coords for i in indices])
    es = np.stack([samples[i].pt_src.existence for i in indices])
    ct = np.stack([samples[i].pt_tgt.coords for i in indices])
    et = np.stack([samples[i].pt_tgt.existence for i in indices])
    return xs, x0, cs, es, ct, et


def train_loop(
    samples,
    val_samples,
    ccfg: ConditionerConfig,
    dcfg: DenoiserConfig,
    cfg: TrainConfig,
    metrics_path: Path | None = None,
):
    """Minimize velocity MSE with Adam; returns (cond, denoiser, metrics).

    Seeded and reproducible: shuffling, flow times, and noise all come from
    one generator, and each batch runs as a single stacked graph. Metrics
    are one dict per epoch {epoch, loss, val_epe}, optionally streamed to
    line-delimited JSON.
    """
    if not samples:
        raise ValueError("training dataset is empty")
    ag.tune_large_alloc()
    dtype = cfg.np_dtype
    cond_params = init_conditioner_params(ccfg, seed=cfg.seed, dtype=dtype)
    den_params = init_denoiser_params(dcfg, seed=cfg.seed + 1, dtype=dtype)
    opt = Adam([cond_params, den_params], lr=cfg.lr, betas=cfg.betas)
    rng = np.random.default_rng(cfg.seed)
    metrics = []
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(samples))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                xs, x0, cs, es, ct, et = _stack_batch(samples, batch, dtype)
                t = rng.uniform(size=len(batch))
                high = rng.uniform(size=len(batch)) < cfg.t_high_fraction
                t[high] = rng.uniform(0.85, 1.0, size=int(high.sum()))
                eps = rng.standard_normal(x0.shape).astype(dtype)
                x_t = ((1.0 - t[:, None, None, None, None]) * x0 + t[:, None, None, None, None] * eps).astype(dtype)
                v_star = eps - x0
                opt.zero_grads()
                v_hat = _predict_velocity_arrays(
                    xs, x_t, t, cs, es, ct, et,
                    cond_params, den_params, ccfg, dcfg,
                    condition_tracks=cfg.condition_tracks,
                )
                # velocity error weighted by t^2, i.e. the MSE of the implied
                # clean-sample estimate x0_hat = x_t - t * v_hat; plain
                # velocity MSE weights the high-noise regime (where the track
                # condition carries all the information) by 1/t^2 and the
                # model never learns to use it there
                diff = ag.sub(v_hat, ag.const(v_star, dtype))
                diff = ag.mul(diff, ag.const(t[:, None, None, None, None], dtype))
                loss = ag.mean_all(ag.mul(diff, diff))
                ag.backward(loss)
                if cfg.lr > 0:
                    opt.step()
                losses.append(float(loss.data))
            entry = {"epoch": epoch, "loss": float(np.mean(losses))}
            if val_samples and (epoch + 1) % cfg.val_every == 0:
                entry["val_epe"] = evaluate_epe(
                    val_samples[: cfg.val_pairs], cond_params, den_params, ccfg, dcfg, cfg
                )
            metrics.append(entry)
            if sink:
                sink.write(json.dumps(entry) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    return cond_params, den_params, metrics


def generate(
    sample: PreparedSample,
    cond_params: ParamStore,
    den_params: ParamStore,
    ccfg: ConditionerConfig,
    dcfg: DenoiserConfig,
    steps: int,
    rng: np.random.Generator,
    condition_tracks: bool = True,
) -> np.ndarray:
    """Euler-integrate the learned velocity from noise to a target video.

    steps uniform substeps from t=1 to t=0; the token result is unpatchified
    and clamped to [0, 1]. Deterministic given the generator state.
    """
    return generate_batch([sample], cond_params, den_params, ccfg, dcfg, steps, rng, condition_tracks)[0]


def generate_batch(
    samples,
    cond_params: ParamStore,
    den_params: ParamStore,
    ccfg: ConditionerConfig,
    dcfg: DenoiserConfig,
    steps: int,
    rng: np.random.Generator,
    condition_tracks: bool = True,
):
    """Generate several pairs at once (one stacked graph per Euler step)."""
    ag.tune_large_alloc()
    dtype = cond_params.tensors()[0].dtype
    idx = list(range(len(samples)))
    xs, x0, cs, es, ct, et = _stack_batch(samples, idx, dtype)
    x = rng.standard_normal(x0.shape).astype(dtype)
    dt = 1.0 / steps
    with ag.no_grad():
        for s in range(steps):
            t = np.full(len(samples), 1.0 - s * dt)
            v = _predict_velocity_arrays(
                xs, x, t, cs, es, ct, et,
                cond_params, den_params, ccfg, dcfg,
                condition_tracks=condition_tracks,
            )
            x = x - dt * v.data
    return [
        np.clip(unpatchify(x[i].astype(np.float64), dcfg.patch), 0.0, 1.0)
        for i in range(len(samples))
    ]


def evaluate_epe(
    samples,
    cond_params: ParamStore,
    den_params: ParamStore,
    ccfg: ConditionerConfig,
    dcfg: DenoiserConfig,
    cfg: TrainConfig,
) -> float:
    """Held-out blob EPE: generate each pair's target and score its centers."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101]).generate_state(1)[0])
    videos = generate_batch(
        samples, cond_params, den_params, ccfg, dcfg, cfg.sample_steps, rng,
        condition_tracks=cfg.condition_tracks,
    )
    return float(np.mean([blob_epe(v, s) for v, s in zip(videos, samples)]))
