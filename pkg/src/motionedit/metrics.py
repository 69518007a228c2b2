"""Reconstruction metrics on 8-bit frames: L1, PSNR, SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imageio import to_uint8
from .tensor import DimensionError

SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


def _bytes(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.dtype != np.uint8:
        a = to_uint8(a)
    if b.dtype != np.uint8:
        b = to_uint8(b)
    return a.astype(np.float64), b.astype(np.float64)


def metric_l1(a, b) -> float:
    """Mean absolute difference on the [0, 1] scale."""
    x, y = _bytes(a, b)
    return float(np.abs(x - y).mean() / 255.0)


def metric_psnr(a, b) -> float:
    """PSNR in dB with MAX=255; ``inf`` for identical inputs."""
    x, y = _bytes(a, b)
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _ssim_plane(x: np.ndarray, y: np.ndarray, win: int) -> float:
    wx = sliding_window_view(x, (win, win))
    wy = sliding_window_view(y, (win, win))
    mx = wx.mean(axis=(-1, -2))
    my = wy.mean(axis=(-1, -2))
    vx = (wx * wx).mean(axis=(-1, -2)) - mx * mx
    vy = (wy * wy).mean(axis=(-1, -2)) - my * my
    cov = (wx * wy).mean(axis=(-1, -2)) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float((num / den).mean())


def metric_ssim(a, b, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all ``window x window`` uniform windows and channels.

    Accepts ``[H, W]`` or ``[C, H, W]``; window statistics are population
    moments.
    """
    x, y = _bytes(a, b)
    if x.ndim == 2:
        x, y = x[None], y[None]
    if x.shape[-1] < window or x.shape[-2] < window:
        raise DimensionError(f"image {x.shape} smaller than the {window}x{window} SSIM window")
    return float(np.mean([_ssim_plane(x[c], y[c], window) for c in range(x.shape[0])]))


@dataclass
class MetricsReport:
    l1: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    @property
    def frames(self) -> int:
        return len(self.l1)

    @property
    def mean_l1(self) -> float:
        return float(np.mean(self.l1))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_text(self) -> str:
        lines = ["frame_index,l1,psnr,ssim"]
        for i, (l1, p, s) in enumerate(zip(self.l1, self.psnr, self.ssim)):
            lines.append(f"{i},{l1:.6f},{_fmt_psnr(p)},{s:.6f}")
        lines.append(f"mean,{self.mean_l1:.6f},{_fmt_psnr(self.mean_psnr)},{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"


def _fmt_psnr(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:.4f}"


def compare_clips(a: np.ndarray, b: np.ndarray) -> MetricsReport:
    """Per-frame metrics for two ``[F, 3, H, W]`` clips."""
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"clips differ in shape: {np.shape(a)} vs {np.shape(b)}")
    rep = MetricsReport()
    for fa, fb in zip(a, b):
        rep.l1.append(metric_l1(fa, fb))
        rep.psnr.append(metric_psnr(fa, fb))
        rep.ssim.append(metric_ssim(fa, fb))
    return rep
