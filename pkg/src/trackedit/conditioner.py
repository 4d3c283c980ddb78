"""Track conditioner: coordinate cross-attention sampling and splatting.

Projected tracks (normalized x, y, disparity z, existence flag) are encoded
with a sinusoidal positional code the width of one attention head. Sampling
cross-attention gathers per-track visual context from the source video
tokens (track codes as queries, an xy-grid code as keys, raw video tokens
as values), two self-attention transformer blocks aggregate each track over
time, a depth code is added per branch, and a shared-weight splatting
cross-attention distributes the tokens back onto frame-shaped grids for the
source and target branches.

Structural properties: queries and keys pass through learned lifts, values
are consumed raw, there is no additive attention bias anywhere, and
visibility flags never enter (ProjectedTracks carries none). All gradients
are analytic reverse-mode via the tape in `autograd`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeMismatch
from .params import ParamStore, uniform_init
from .tracks import ProjectedTracks

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# positional encoding


@dataclass(frozen=True)
class PosEncConfig:
    """Sinusoidal code over the four track inputs (x, y, z, existence).

    Each input owns d_head/4 lanes laid out as interleaved sin/cos pairs at
    geometrically spaced frequencies (spacing base**(1/n_freqs), fastest
    lane `cycles` cycles per unit). x and y use whole-cycle frequencies, so
    mirroring x -> 1-x negates sin lanes and preserves cos lanes exactly;
    the code is therefore 1-periodic in x and y, and track coordinates are
    clamped to the frame at the conditioner intake (coord_posenc) so
    off-screen tracks pin to the nearest edge code instead of wrapping.
    z and existence use half-cycle-offset frequencies so the values 0 and 1
    stay distinguishable. Full sin/cos pairing needs d_head % 8 == 0;
    d_head % 4 == 0 is accepted and drops to sin-only lanes.
    """

    d_head: int
    heads: int
    base: float = 10000.0
    cycles: int = 64

    def __post_init__(self):
        if self.d_head % 4 != 0 or self.d_head < 4:
            raise ValueError(f"d_head must be a positive multiple of 4, got {self.d_head}")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")

    @property
    def lanes_per_input(self) -> int:
        return self.d_head // 4

    def whole_cycles(self) -> np.ndarray:
        """Cycle counts per frequency lane: geometric ladder with ratio
        base**(1/n) down from `cycles`, rounded to whole cycles (floor 1) so
        the x/y mirror parity is exact."""
        n = (self.lanes_per_input + 1) // 2
        k = np.arange(n, dtype=np.float64)
        return np.maximum(1.0, np.round(self.cycles * self.base ** (-k / n)))


def _encode_component(
    v: np.ndarray, cycles: np.ndarray, lanes: int, offset: float, scale: float = 1.0
) -> np.ndarray:
    omega = TWO_PI * (cycles + offset)
    angles = (v * scale)[..., None] * omega
    out = np.empty(v.shape + (lanes,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)[..., : (lanes + 1) // 2]
    out[..., 1::2] = np.cos(angles)[..., : lanes // 2]
    return out


def posenc4(x, y, z, e, cfg: PosEncConfig) -> np.ndarray:
    """Encode the four track inputs into a d_head-wide vector.

    Scalar inputs give a (d_head,) vector; array inputs broadcast to
    (..., d_head). The encoding is deterministic and non-learned.
    """
    vals = np.broadcast_arrays(
        np.asarray(x, dtype=np.float64),
        np.asarray(y, dtype=np.float64),
        np.asarray(z, dtype=np.float64),
        np.asarray(e, dtype=np.float64),
    )
    lanes = cfg.lanes_per_input
    cycles = cfg.whole_cycles()
    blocks = [
        _encode_component(vals[0], cycles, lanes, 0.0),
        _encode_component(vals[1], cycles, lanes, 0.0),
        _encode_component(vals[2], cycles, lanes, 0.5),
        _encode_component(vals[3], cycles, lanes, 0.5),
    ]
    return np.concatenate(blocks, axis=-1)


@dataclass(frozen=True)
class GridKey:
    """Positional code of patch centers: entry (i, j) encodes
    ((j+0.5)/w, (i+0.5)/h, z=0, existence=1)."""

    data: np.ndarray  # (h, w, d_head)

    @property
    def flat(self) -> np.ndarray:
        h, w, d = self.data.shape
        return self.data.reshape(h * w, d)


def build_grid_key(h: int, w: int, cfg: PosEncConfig) -> GridKey:
    if h < 1 or w < 1:
        raise ValueError(f"grid must be at least 1x1, got {h}x{w}")
    return _grid_key_cached(h, w, cfg)


@lru_cache(maxsize=32)
def _grid_key_cached(h: int, w: int, cfg: PosEncConfig) -> GridKey:
    xs = (np.arange(w, dtype=np.float64) + 0.5) / w
    ys = (np.arange(h, dtype=np.float64) + 0.5) / h
    gx, gy = np.meshgrid(xs, ys)
    return GridKey(posenc4(gx, gy, 0.0, 1.0, cfg))


def track_posenc(pt: ProjectedTracks, cfg: PosEncConfig) -> np.ndarray:
    """(f, N, d_head) code of projected track coordinates + existence."""
    return coord_posenc(pt.coords, pt.existence, cfg)


def coord_posenc(coords: np.ndarray, existence: np.ndarray, cfg: PosEncConfig) -> np.ndarray:
    """(..., d_head) code of (..., 3) coordinates plus existence flags.

    x and y are clamped to the frame: the positional code is 1-periodic in
    those inputs, so off-screen coordinates would otherwise alias onto the
    opposite edge. Off-screen tracks get the nearest edge code; moved-away
    (removed) tracks are distinguished by their existence lanes.
    """
    c = np.asarray(coords)
    edge = np.nextafter(1.0, 0.0)
    x = np.clip(c[..., 0], 0.0, edge)
    y = np.clip(c[..., 1], 0.0, edge)
    return posenc4(x, y, c[..., 2], existence, cfg)


# ---------------------------------------------------------------------------
# model configuration and parameters


@dataclass(frozen=True)
class ConditionerConfig:
    d: int = 128
    heads: int = 4
    n_temporal_blocks: int = 2
    ff_mult: int = 4
    # initial gain of the coordinate-matching component of Q/K lifts
    # (xy lanes / z+existence lanes); 0 disables the structured init
    qk_gain_xy: float = 1.4
    qk_gain_ze: float = 0.7
    pe: PosEncConfig = field(default=None)

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.pe is None:
            object.__setattr__(self, "pe", PosEncConfig(self.d_head, self.heads))
        if self.pe.d_head != self.d_head:
            raise ValueError("positional code width must equal one head's width")

    @property
    def d_head(self) -> int:
        return self.d // self.heads


def _matched_lift_init(rng, cfg: ConditionerConfig, dtype) -> np.ndarray:
    """Coordinate lift init: identity tiling per head plus uniform noise.

    Every head starts as a diagonal gain on the positional code, so the
    raw query/key inner product (a cosine matched filter over coordinates)
    survives the lift and cross-attention is localized from step one; the
    uniform +-1/sqrt(fan_in) term keeps heads distinct and everything
    trainable.
    """
    dh, d = cfg.d_head, cfg.d
    w = uniform_init(rng, (dh, d), dtype)
    lanes = cfg.pe.lanes_per_input
    gains = np.concatenate(
        [
            np.full(2 * lanes, cfg.qk_gain_xy),
            np.full(2 * lanes, cfg.qk_gain_ze),
        ]
    ).astype(dtype)
    for h in range(cfg.heads):
        w[:, h * dh : (h + 1) * dh] += np.diag(gains)
    return w


def init_conditioner_params(
    cfg: ConditionerConfig, seed: int, dtype=np.float64
) -> ParamStore:
    """Seeded init: uniform +-1/sqrt(fan_in) matrices, norm scales 1, and a
    structured matched-filter component on the coordinate Q/K lifts."""
    rng = np.random.default_rng(seed)
    p = ParamStore()
    d, dh = cfg.d, cfg.d_head

    def w(name, shape):
        p.add(name, uniform_init(rng, shape, dtype))

    p.add("sample.q_proj", _matched_lift_init(rng, cfg, dtype))
    p.add("sample.k_proj", _matched_lift_init(rng, cfg, dtype))
    w("sample.out_proj", (d, d))
    for i in range(cfg.n_temporal_blocks):
        p.add(f"temporal.{i}.ln1", np.ones(d, dtype=dtype))
        w(f"temporal.{i}.wq", (d, d))
        w(f"temporal.{i}.wk", (d, d))
        w(f"temporal.{i}.wv", (d, d))
        w(f"temporal.{i}.wo", (d, d))
        p.add(f"temporal.{i}.ln2", np.ones(d, dtype=dtype))
        w(f"temporal.{i}.ff1", (d, cfg.ff_mult * d))
        w(f"temporal.{i}.ff2", (cfg.ff_mult * d, d))
    w("depth.proj", (dh, d))
    # one shared splat parameter set serves both branches
    p.add("splat.q_proj", _matched_lift_init(rng, cfg, dtype))
    p.add("splat.k_proj", _matched_lift_init(rng, cfg, dtype))
    w("splat.out_proj", (d, d))
    return p


# ---------------------------------------------------------------------------
# attention


def _split_heads(t: Tensor, heads: int) -> Tensor:
    *lead, s, d = t.shape
    t = ag.reshape(t, (*lead, s, heads, d // heads))
    return ag.swapaxes(t, -3, -2)


def _merge_heads(t: Tensor) -> Tensor:
    t = ag.swapaxes(t, -3, -2)
    *lead, s, h, dh = t.shape
    return ag.reshape(t, (*lead, s, h * dh))


def attend(
    queries,
    keys,
    values,
    q_proj: Tensor,
    k_proj: Tensor,
    out_proj: Tensor,
    heads: int,
) -> Tensor:
    """Multi-head cross-attention with raw values and no attention bias.

    Queries and keys (width d_head) are lifted to d by their projections
    and split into heads; values are split by head without any projection.
    Per head: softmax(Q K^T / sqrt(d_head)) V, then heads are concatenated
    and output-projected.
    """
    queries = queries if isinstance(queries, Tensor) else ag.const(queries, q_proj.dtype)
    keys = keys if isinstance(keys, Tensor) else ag.const(keys, k_proj.dtype)
    values = values if isinstance(values, Tensor) else ag.const(values, out_proj.dtype)
    if queries.shape[-1] != q_proj.shape[0] or keys.shape[-1] != k_proj.shape[0]:
        raise ShapeMismatch(
            f"query/key width {queries.shape[-1]}/{keys.shape[-1]}"
            f" does not match projections {q_proj.shape[0]}/{k_proj.shape[0]}"
        )
    if values.shape[-1] % heads != 0:
        raise ShapeMismatch(f"value width {values.shape[-1]} not divisible by {heads} heads")
    d_head = q_proj.shape[0]
    q = _split_heads(ag.matmul(queries, q_proj), heads)
    k = _split_heads(ag.matmul(keys, k_proj), heads)
    v = _split_heads(values, heads)
    out = _merge_heads(ag.attention(q, k, v, 1.0 / np.sqrt(d_head)))
    return ag.matmul(out, out_proj)


def _temporal_block(x: Tensor, params: ParamStore, prefix: str, heads: int) -> Tensor:
    """Pre-norm self-attention transformer block over axis -2 (time)."""
    h = ag.layer_norm(x, params[f"{prefix}.ln1"])
    q = _split_heads(ag.matmul(h, params[f"{prefix}.wq"]), heads)
    k = _split_heads(ag.matmul(h, params[f"{prefix}.wk"]), heads)
    v = _split_heads(ag.matmul(h, params[f"{prefix}.wv"]), heads)
    att = ag.attention(q, k, v, 1.0 / np.sqrt(q.shape[-1]))
    x = ag.add(x, ag.matmul(_merge_heads(att), params[f"{prefix}.wo"]))
    h2 = ag.layer_norm(x, params[f"{prefix}.ln2"])
    ff = ag.matmul(ag.gelu(ag.matmul(h2, params[f"{prefix}.ff1"])), params[f"{prefix}.ff2"])
    return ag.add(x, ff)


# ---------------------------------------------------------------------------
# conditioner operations


def sample_context(
    pt_src: ProjectedTracks,
    grid: GridKey,
    vid_tokens,
    params: ParamStore,
    cfg: ConditionerConfig,
    apply_temporal: bool = True,
) -> Tensor:
    """Gather per-track visual context from source video tokens.

    Per frame the N track codes query the grid key over the frame's h*w
    video tokens; the (f, N, d) result is then refined by the temporal
    transformer blocks independently per track (sequences of length f).
    """
    vid = vid_tokens if isinstance(vid_tokens, Tensor) else ag.const(vid_tokens)
    if pt_src.n_frames != vid.shape[-4]:
        raise ShapeMismatch(f"tracks have {pt_src.n_frames} frames, video tokens {vid.shape[-4]}")
    return _sample_context_arrays(
        pt_src.coords, pt_src.existence, grid, vid, params, cfg, apply_temporal
    )


def _sample_context_arrays(
    coords, existence, grid: GridKey, vid: Tensor, params, cfg, apply_temporal=True
) -> Tensor:
    """Array core of sample_context; accepts leading batch dims."""
    *lead, f, h, w, d = vid.shape
    if d != cfg.d:
        raise ShapeMismatch(f"token width {d} != configured d {cfg.d}")
    queries = ag.const(coord_posenc(coords, existence, cfg.pe), vid.dtype)
    keys = ag.const(grid.flat, vid.dtype)
    values = ag.reshape(vid, (*lead, f, h * w, d))
    tokens = attend(
        queries, keys, values,
        params["sample.q_proj"], params["sample.k_proj"], params["sample.out_proj"],
        cfg.heads,
    )
    if not apply_temporal:
        return tokens
    tokens = ag.swapaxes(tokens, -3, -2)  # (..., N, f, d): one sequence per track
    for i in range(cfg.n_temporal_blocks):
        tokens = _temporal_block(tokens, params, f"temporal.{i}", cfg.heads)
    return ag.swapaxes(tokens, -3, -2)


def inject_depth(
    tt: Tensor,
    z_branch: np.ndarray,
    params: ParamStore,
    cfg: ConditionerConfig,
) -> Tensor:
    """Add the projected code of a branch's disparity values to the tokens."""
    z = np.asarray(z_branch, dtype=np.float64)
    if z.shape != tt.shape[:-1]:
        raise ShapeMismatch(f"z values {z.shape} do not match tokens {tt.shape[:-1]}")
    pe_z = ag.const(posenc4(0.0, 0.0, z, 1.0, cfg.pe), tt.dtype)
    return ag.add(tt, ag.matmul(pe_z, params["depth.proj"]))


def splat(
    tt: Tensor,
    pt_branch: ProjectedTracks,
    grid: GridKey,
    params: ParamStore,
    cfg: ConditionerConfig,
) -> Tensor:
    """Distribute track tokens onto the frame grid of one branch.

    The reverse of sampling: grid codes query the branch's track codes with
    the (depth-injected) track tokens as values. Source and target branches
    call this with the same shared parameter set.
    """
    if pt_branch.n_frames != tt.shape[-3] or pt_branch.n_tracks != tt.shape[-2]:
        raise ShapeMismatch(
            f"branch tracks ({pt_branch.n_frames}, {pt_branch.n_tracks})"
            f" do not match tokens {tt.shape[-3:-1]}"
        )
    return _splat_arrays(tt, pt_branch.coords, pt_branch.existence, grid, params, cfg)


def _splat_arrays(tt: Tensor, coords, existence, grid: GridKey, params, cfg) -> Tensor:
    """Array core of splat; accepts leading batch dims."""
    *lead, f, n, d = tt.shape
    h, w, _ = grid.data.shape
    keys = ag.const(coord_posenc(coords, existence, cfg.pe), tt.dtype)
    queries = ag.const(grid.flat, tt.dtype)
    out = attend(
        queries, keys, tt,
        params["splat.q_proj"], params["splat.k_proj"], params["splat.out_proj"],
        cfg.heads,
    )
    return ag.reshape(out, (*lead, f, h, w, d))


def condition_tokens(vid_src, vid_tgt, trk_src, trk_tgt) -> Tensor:
    """Add track grids to video grids and concatenate branches.

    Output is the (2*f*h*w, d) sequence flattened in (branch, f, h, w)
    order, the conditioning input of the denoiser. Leading batch dims are
    carried through.
    """
    grids = [
        t if isinstance(t, Tensor) else ag.const(t)
        for t in (vid_src, vid_tgt, trk_src, trk_tgt)
    ]
    shape = grids[0].shape
    for g in grids[1:]:
        if g.shape != shape:
            raise ShapeMismatch(f"token grids disagree: {g.shape} vs {shape}")
    *lead, f, h, w, d = shape
    src = ag.reshape(ag.add(grids[0], grids[2]), (*lead, f * h * w, d))
    tgt = ag.reshape(ag.add(grids[1], grids[3]), (*lead, f * h * w, d))
    return ag.concat([src, tgt], axis=-2)


@dataclass
class ConditionerContext:
    """Forward tape needed to run the reverse pass."""

    vid: Tensor
    out_src: Tensor
    out_tgt: Tensor
    params: ParamStore


def conditioner_forward(
    vid_src_tokens,
    pt_src: ProjectedTracks,
    pt_tgt: ProjectedTracks,
    params: ParamStore,
    cfg: ConditionerConfig,
) -> ConditionerContext:
    """Full conditioner: sample -> inject depth per branch -> shared splat.

    Consumes every track regardless of occlusion; ProjectedTracks has no
    visibility field by design. Returns the recorded context; track token
    grids live in ``.out_src.data`` / ``.out_tgt.data``.
    """
    if pt_src.coords.shape != pt_tgt.coords.shape:
        raise ShapeMismatch(
            f"paired projected tracks disagree: {pt_src.coords.shape} vs {pt_tgt.coords.shape}"
        )
    # wrap raw arrays as differentiable leaves so input gradients are available
    vid = vid_src_tokens if isinstance(vid_src_tokens, Tensor) else ag.param(np.asarray(vid_src_tokens))
    out_src, out_tgt = conditioner_grids(
        vid,
        pt_src.coords, pt_src.existence,
        pt_tgt.coords, pt_tgt.existence,
        params, cfg,
    )
    return ConditionerContext(vid=vid, out_src=out_src, out_tgt=out_tgt, params=params)


def conditioner_grids(
    vid: Tensor,
    coords_src, exist_src,
    coords_tgt, exist_tgt,
    params: ParamStore,
    cfg: ConditionerConfig,
):
    """Array core of the conditioner; accepts leading batch dims."""
    *_, f, h, w, d = vid.shape
    grid = build_grid_key(h, w, cfg.pe)
    sampled = _sample_context_arrays(coords_src, exist_src, grid, vid, params, cfg)
    src_tokens = inject_depth(sampled, np.asarray(coords_src)[..., 2], params, cfg)
    tgt_tokens = inject_depth(sampled, np.asarray(coords_tgt)[..., 2], params, cfg)
    out_src = _splat_arrays(src_tokens, coords_src, exist_src, grid, params, cfg)
    out_tgt = _splat_arrays(tgt_tokens, coords_tgt, exist_tgt, grid, params, cfg)
    return out_src, out_tgt


def conditioner_backward(ctx: ConditionerContext, g_src: np.ndarray, g_tgt: np.ndarray) -> dict:
    """Analytic reverse pass for upstream gradients on both track grids.

    Returns gradients for every parameter plus the video-token input under
    the key "inputs.vid_src".
    """
    ctx.params.zero_grads()
    ctx.vid.grad = None
    total = ag.add(
        ag.sum_all(ag.mul(ctx.out_src, ag.const(g_src, ctx.out_src.dtype))),
        ag.sum_all(ag.mul(ctx.out_tgt, ag.const(g_tgt, ctx.out_tgt.dtype))),
    )
    ag.backward(total)
    grads = {
        name: (np.zeros_like(t.data) if t.grad is None else np.asarray(t.grad))
        for name, t in ctx.params.items()
    }
    grads["inputs.vid_src"] = (
        np.zeros_like(ctx.vid.data) if ctx.vid.grad is None else np.asarray(ctx.vid.grad)
    )
    return grads
