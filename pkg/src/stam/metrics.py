"""Evaluation mathematics: Colour-SSIM and the adversarial value function."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, ShapeError, UsageError


@dataclass(frozen=True)
class ColourSsimConfig:
    """Constants and statistics mode for the per-channel similarity index.

    Defaults are the standard (0.01)^2 and (0.03)^2 for unit-range pixels.
    Global mode uses whole-image statistics per channel; windowed mode
    averages the index over sliding square windows first.
    """

    c1: float = 1e-4
    c2: float = 9e-4
    mode: str = "global"
    window: int = 7

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError(f"c1 and c2 must be positive, got {self.c1}, {self.c2}")
        if self.mode not in ("global", "windowed"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "windowed" and (self.window < 1 or self.window % 2 == 0):
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")


def _ssim_term(mx, my, vx, vy, cov, c1: float, c2: float):
    return ((2 * mx * my + c1) * (2 * cov + c2)) / (
        (mx**2 + my**2 + c1) * (vx + vy + c2)
    )


def _as_chw(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"images must be (h,w) or (c,h,w), got {arr.shape}")
    return arr


def colour_ssim(x, y, cfg: ColourSsimConfig = ColourSsimConfig()) -> float:
    """Structural similarity of two images, averaged over channels.

    Per channel the index compares means, population variances and the
    population covariance; population statistics keep the self-similarity
    identity exact.
    """
    xa, ya = _as_chw(x), _as_chw(y)
    if xa.shape != ya.shape:
        raise ShapeError(f"image shapes differ: {xa.shape} vs {ya.shape}")
    for name, arr in (("x", xa), ("y", ya)):
        if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
            raise UsageError(f"image {name} has pixels outside [0,1]")

    values = []
    for xc, yc in zip(xa, ya):
        if cfg.mode == "global":
            mx, my = xc.mean(), yc.mean()
            vx = (xc * xc).mean() - mx * mx
            vy = (yc * yc).mean() - my * my
            cov = (xc * yc).mean() - mx * my
            values.append(_ssim_term(mx, my, vx, vy, cov, cfg.c1, cfg.c2))
        else:
            k = cfg.window
            if k > min(xc.shape):
                raise ConfigError(f"window {k} exceeds image extent {xc.shape}")
            wx = np.lib.stride_tricks.sliding_window_view(xc, (k, k))
            wy = np.lib.stride_tricks.sliding_window_view(yc, (k, k))
            mx = wx.mean(axis=(-1, -2))
            my = wy.mean(axis=(-1, -2))
            vx = (wx * wx).mean(axis=(-1, -2)) - mx * mx
            vy = (wy * wy).mean(axis=(-1, -2)) - my * my
            cov = (wx * wy).mean(axis=(-1, -2)) - mx * my
            values.append(_ssim_term(mx, my, vx, vy, cov, cfg.c1, cfg.c2).mean())
    return float(np.mean(values))


@dataclass
class GanScoreBatch:
    """Discriminator probabilities for real and generated samples."""

    real_scores: Sequence[float]
    fake_scores: Sequence[float]

    def __post_init__(self):
        if not len(self.real_scores) or not len(self.fake_scores):
            raise ConfigError("score batches must be nonempty")
        for name, scores in (("real", self.real_scores), ("fake", self.fake_scores)):
            arr = np.asarray(scores, dtype=np.float64)
            if np.any(arr <= 0) or np.any(arr >= 1):
                raise DomainError(
                    f"{name} scores must lie strictly inside (0,1); "
                    "the value function diverges at the endpoints"
                )


def gan_value(batch: GanScoreBatch) -> float:
    """mean(log D(x|y)) + mean(log(1 - D(G(z|y)))) over the batch.

    Evaluation only: the scores are externally supplied, no generator or
    discriminator is trained here.
    """
    real = np.asarray(batch.real_scores, dtype=np.float64)
    fake = np.asarray(batch.fake_scores, dtype=np.float64)
    return float(np.mean(np.log(real)) + np.mean(np.log1p(-fake)))
