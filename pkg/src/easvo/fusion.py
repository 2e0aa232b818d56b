"""Events Aggregation and Superimposition (EAS).

The event slice that starts at a frame's timestamp is smoothed with a
Gaussian and added, scaled by an adaptive weight, onto the pixels of the
frame that are darker than a threshold::

    EAS(x, y) = I(x, y) + alpha * G(es)(x, y)    if I(x, y) <  beta
    EAS(x, y) = I(x, y)                           if I(x, y) >= beta

with ``alpha = max(max(I), gamma)``. Results saturate at 255.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .dataset_io import EventStream, IntensityFrame
from .representations import DEFAULT_N_EVENTS, InsufficientEventsError, slice_for_frame

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    beta: float = 128.0
    gamma: float = 64.0
    gaussian_sigma: float = 1.0
    gaussian_kernel_size: int = 5
    n_events: int = DEFAULT_N_EVENTS

    def __post_init__(self):
        if self.gaussian_kernel_size < 3 or self.gaussian_kernel_size % 2 == 0:
            raise ValueError("gaussian_kernel_size must be odd and >= 3")
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be positive")
        if not 0 <= self.gamma <= 255:
            raise ValueError("gamma must lie in [0, 255]")
        if not 0 <= self.beta <= 255:
            raise ValueError("beta must lie in [0, 255]")
        if self.n_events < 1:
            raise ValueError("n_events must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class FusedFrame:
    t: float
    pixels: np.ndarray
    alpha_used: float
    fused: bool = True  # False when passed through without events

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def as_frame(self):
        return IntensityFrame(self.t, self.pixels)


def gaussian_kernel(sigma, size):
    r = size // 2
    k = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(grid, sigma=1.0, kernel_size=5):
    """Separable normalised Gaussian blur with mirror borders."""
    k = gaussian_kernel(sigma, kernel_size)
    out = convolve1d(np.asarray(grid, dtype=np.float64), k, axis=0, mode="mirror")
    out = convolve1d(out, k, axis=1, mode="mirror")
    # a binary input keeps the output in [0, 1]; clip float round-off, and
    # make a fully covered neighbourhood exactly 1 so rounding ties stay stable
    out[np.abs(out - 1.0) < 1e-9] = 1.0
    return np.clip(out, 0.0, 1.0)


def adaptive_alpha(frame, gamma):
    px = frame.pixels if isinstance(frame, IntensityFrame) else np.asarray(frame)
    peak = float(px.max()) if px.size else 0.0
    return max(peak, float(gamma))


def superimpose(pixels, smoothed, alpha, beta):
    """Apply the thresholded superimposition to a frame; returns uint8."""
    base = np.asarray(pixels)
    enhanced = np.floor(base.astype(np.float64) + alpha * smoothed + 0.5)
    enhanced = np.clip(enhanced, 0.0, 255.0).astype(np.uint8)
    return np.where(base < beta, enhanced, base).astype(np.uint8)


def fuse_with_slice(frame: IntensityFrame, slice_grid, cfg: FusionConfig) -> FusedFrame:
    smoothed = gaussian_smooth(slice_grid, cfg.gaussian_sigma, cfg.gaussian_kernel_size)
    alpha = adaptive_alpha(frame, cfg.gamma)
    return FusedFrame(frame.t, superimpose(frame.pixels, smoothed, alpha, cfg.beta), alpha)


def fuse(frame: IntensityFrame, stream: EventStream, cfg: FusionConfig) -> FusedFrame:
    """Fuse one frame with the event slice starting at its timestamp."""
    es = slice_for_frame(stream, frame.t, cfg.n_events)
    return fuse_with_slice(frame, es.grid, cfg)


def fuse_sequence(frames, stream: EventStream, cfg: FusionConfig, allow_short=False):
    """Fuse every frame; frames without a full slice pass through unfused."""
    out = []
    for frame in frames:
        try:
            es = slice_for_frame(stream, frame.t, cfg.n_events)
        except InsufficientEventsError:
            es = None
        if es is None or (es.short and not allow_short):
            log.warning("frame t=%.6f: not enough events, passing through unfused", frame.t)
            out.append(FusedFrame(frame.t, frame.pixels.copy(), 0.0, fused=False))
            continue
        out.append(fuse_with_slice(frame, es.grid, cfg))
    return out
