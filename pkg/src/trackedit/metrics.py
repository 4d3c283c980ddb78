"""Video quality metrics: endpoint error, PSNR, SSIM, and masked variants.

Masked and unmasked paths share one implementation (unmasked = all-ones
mask), so they agree bit-for-bit when the mask covers everything. PSNR of
identical inputs returns the +inf sentinel, serialized as the string "inf"
in reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, FrameTooSmall, ShapeMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0


def epe(a: np.ndarray, b: np.ndarray) -> float:
    """Mean Euclidean distance between corresponding 2D tracks in pixels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape[-1] != 2:
        raise ShapeMismatch(f"track arrays must share shape (F, N, 2), got {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, axis=-1).mean())


def epe_per_frame(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.linalg.norm(a - b, axis=-1).mean(axis=tuple(range(1, a.ndim - 1)))


def _check_video_pair(a, b, mask):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"video shapes differ: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape[:-1], dtype=bool)
    else:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != a.shape[:-1]:
            raise ShapeMismatch(f"mask shape {mask.shape} must be {a.shape[:-1]}")
    if not mask.any():
        raise EmptyMask("mask selects no pixels")
    return a, b, mask


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10 log10(1 / MSE) with peak 1.0 over (masked) pixels; inf if equal."""
    a, b, mask = _check_video_pair(a, b, mask)
    diff = a - b
    mse = float((diff[mask] ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def psnr_per_frame(a, b, mask=None) -> list:
    a, b, mask = _check_video_pair(a, b, mask)
    out = []
    for k in range(a.shape[0]):
        if not mask[k].any():
            out.append(float("nan"))
            continue
        mse = float(((a[k] - b[k])[mask[k]] ** 2).mean())
        out.append(float("inf") if mse == 0.0 else float(10.0 * np.log10(1.0 / mse)))
    return out


def _gaussian_kernel() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    x = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_map(x: np.ndarray, y: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """SSIM over all valid (fully interior) windows of one channel."""
    from numpy.lib.stride_tricks import sliding_window_view

    wx = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mu_x = np.einsum("ijkl,kl->ij", wx, kernel)
    mu_y = np.einsum("ijkl,kl->ij", wy, kernel)
    xx = np.einsum("ijkl,kl->ij", wx * wx, kernel)
    yy = np.einsum("ijkl,kl->ij", wy * wy, kernel)
    xy = np.einsum("ijkl,kl->ij", wx * wy, kernel)
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    return ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean windowed SSIM (11x11 Gaussian, K1=0.01, K2=0.03, L=1).

    The map is evaluated on fully interior windows; a mask selects window
    centers. Scores are averaged over frames, channels, and windows.
    """
    a, b, mask = _check_video_pair(a, b, mask)
    f, h, w = a.shape[:3]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise FrameTooSmall(f"frames {h}x{w} smaller than the {SSIM_WINDOW}-pixel SSIM window")
    kernel = _gaussian_kernel()
    half = SSIM_WINDOW // 2
    values = []
    for k in range(f):
        center_mask = mask[k, half : h - half, half : w - half]
        if not center_mask.any():
            continue
        for c in range(a.shape[3]):
            m = _ssim_map(a[k, :, :, c], b[k, :, :, c], kernel)
            values.append(m[center_mask])
    if not values:
        raise EmptyMask("mask selects no interior SSIM windows")
    return float(np.concatenate(values).mean())


def ssim_per_frame(a, b, mask=None) -> list:
    a, b, mask = _check_video_pair(a, b, mask)
    out = []
    for k in range(a.shape[0]):
        try:
            out.append(ssim(a[k : k + 1], b[k : k + 1], mask[k : k + 1]))
        except EmptyMask:
            out.append(float("nan"))
    return out


# ---------------------------------------------------------------------------
# reports


def _sentinel(v: float):
    if np.isinf(v):
        return "inf"
    if np.isnan(v):
        return "nan"
    return float(v)


@dataclass
class MetricReport:
    scalars: dict
    per_frame: dict
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "scalars": {k: _sentinel(v) for k, v in self.scalars.items()},
            "per_frame": {k: [_sentinel(v) for v in series] for k, series in self.per_frame.items()},
            "metadata": self.metadata,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def table(self) -> str:
        lines = ["metric           value"]
        for key in sorted(self.scalars):
            v = self.scalars[key]
            shown = "inf" if np.isinf(v) else f"{v:.6f}"
            lines.append(f"{key:16s} {shown}")
        return "\n".join(lines)


def compare_videos(
    a: np.ndarray,
    b: np.ndarray,
    mask: np.ndarray | None = None,
    tracks_a: np.ndarray | None = None,
    tracks_b: np.ndarray | None = None,
) -> MetricReport:
    """PSNR/SSIM (masked variants when a mask is given) plus optional EPE."""
    scalars = {"psnr": psnr(a, b), "ssim": ssim(a, b)}
    per_frame = {"psnr": psnr_per_frame(a, b), "ssim": ssim_per_frame(a, b)}
    if mask is not None:
        scalars["psnr_masked"] = psnr(a, b, mask)
        scalars["ssim_masked"] = ssim(a, b, mask)
        per_frame["psnr_masked"] = psnr_per_frame(a, b, mask)
        per_frame["ssim_masked"] = ssim_per_frame(a, b, mask)
    if tracks_a is not None and tracks_b is not None:
        scalars["epe"] = epe(tracks_a, tracks_b)
        per_frame["epe"] = epe_per_frame(tracks_a, tracks_b).tolist()
    f, h, w = np.asarray(a).shape[:3]
    meta = {"frames": int(f), "height": int(h), "width": int(w), "masked": mask is not None}
    if tracks_a is not None:
        meta["tracks"] = int(np.asarray(tracks_a).shape[1])
    return MetricReport(scalars=scalars, per_frame=per_frame, metadata=meta)
