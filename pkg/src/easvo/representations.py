"""Image-like representations built from events and frames.

Event slices ignore polarity: a pixel is 1 if any of the aggregated events
fired there. Time surfaces decay exponentially with the age of the last event
at each pixel. Speed-invariant time surfaces (SITS) keep a rank-like value per
pixel that never looks at timestamps, only at event order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .dataset_io import EventStream, IntensityFrame

DEFAULT_N_EVENTS = 15000
DEFAULT_TAU = 0.05
DEFAULT_RADIUS = 3


class InsufficientEventsError(ValueError):
    pass


@dataclass
class EventSlice:
    grid: np.ndarray  # (height, width) uint8 in {0, 1}
    t_start: float
    t_end: float
    n_events: int
    start_index: int = 0
    short: bool = False

    @property
    def width(self):
        return self.grid.shape[1]

    @property
    def height(self):
        return self.grid.shape[0]

    @property
    def end_index(self):
        return self.start_index + self.n_events


@dataclass
class TimeSurfaceMap:
    values: np.ndarray  # float in [0, 1]
    t_ref: float
    tau: float


@dataclass
class SitsMap:
    values: np.ndarray  # int32 in [0, (2R+1)^2]
    radius: int

    @property
    def max_value(self):
        return (2 * self.radius + 1) ** 2


def aggregate_slice(stream: EventStream, start_index: int, n: int) -> EventSlice:
    """Binary slice of events ``[start_index, start_index + n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if start_index < 0 or start_index + n > len(stream):
        raise InsufficientEventsError(
            f"need {n} events from index {start_index}, stream has {len(stream)}"
        )
    stop = start_index + n
    grid = np.zeros(stream.shape, dtype=np.uint8)
    grid[stream.y[start_index:stop], stream.x[start_index:stop]] = 1
    return EventSlice(grid, float(stream.t[start_index]), float(stream.t[stop - 1]), n, start_index)


def slice_for_frame(stream: EventStream, frame_t: float, n: int) -> EventSlice:
    """Slice of the first ``n`` events at or after ``frame_t``.

    When fewer than ``n`` events remain, all of them are used and the slice
    is marked ``short``.
    """
    start = int(np.searchsorted(stream.t, frame_t, side="left"))
    remaining = len(stream) - start
    if remaining <= 0:
        raise InsufficientEventsError(f"no events at or after t={frame_t}")
    if remaining < n:
        s = aggregate_slice(stream, start, remaining)
        s.short = True
        return s
    return aggregate_slice(stream, start, n)


def time_surface(stream: EventStream, up_to_index: int, t_ref: float, tau: float) -> TimeSurfaceMap:
    """Exponentially decayed recency of events ``[0, up_to_index)`` at ``t_ref``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    up_to_index = min(max(int(up_to_index), 0), len(stream))
    last = np.full(stream.shape, -np.inf)
    np.maximum.at(last, (stream.y[:up_to_index], stream.x[:up_to_index]), stream.t[:up_to_index])
    return _surface_from_last(last, t_ref, tau)


def _surface_from_last(last, t_ref, tau):
    values = np.zeros(last.shape)
    seen = np.isfinite(last)
    values[seen] = np.exp(-(t_ref - last[seen]) / tau)
    # events later than t_ref are not expected; keep the map in [0, 1]
    np.clip(values, 0.0, 1.0, out=values)
    return TimeSurfaceMap(values, float(t_ref), float(tau))


@numba.njit(cache=True)
def _sits_update(values, xs, ys, radius):
    h, w = values.shape
    top = (2 * radius + 1) ** 2
    for k in range(xs.shape[0]):
        x = xs[k]
        y = ys[k]
        centre = values[y, x]
        for yy in range(max(0, y - radius), min(h, y + radius + 1)):
            for xx in range(max(0, x - radius), min(w, x + radius + 1)):
                if values[yy, xx] > centre:
                    values[yy, xx] -= 1
        values[y, x] = top


def sits(stream: EventStream, up_to_index: int, radius: int = DEFAULT_RADIUS) -> SitsMap:
    """Replay the speed-invariant update rule over events ``[0, up_to_index)``."""
    builder = SitsBuilder(stream.width, stream.height, radius)
    builder.update(stream, 0, up_to_index)
    return builder.snapshot()


class SitsBuilder:
    """Incremental SITS state; advance it through a stream in order.

    Holds mutable state, so one builder belongs to one consumer.
    """

    def __init__(self, width, height, radius=DEFAULT_RADIUS):
        if radius < 1:
            raise ValueError("radius must be >= 1")
        self.radius = int(radius)
        self.values = np.zeros((height, width), dtype=np.int32)

    def update(self, stream, start, stop):
        stop = min(int(stop), len(stream))
        if stop > start:
            _sits_update(
                self.values,
                stream.x[start:stop].astype(np.int64),
                stream.y[start:stop].astype(np.int64),
                self.radius,
            )

    def snapshot(self):
        return SitsMap(self.values.copy(), self.radius)


class TimeSurfaceBuilder:
    """Incremental last-timestamp memory for building time surfaces in order."""

    def __init__(self, width, height, tau=DEFAULT_TAU):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.tau = float(tau)
        self.last = np.full((height, width), -np.inf)

    def update(self, stream, start, stop):
        stop = min(int(stop), len(stream))
        if stop > start:
            np.maximum.at(self.last, (stream.y[start:stop], stream.x[start:stop]), stream.t[start:stop])

    def surface(self, t_ref):
        return _surface_from_last(self.last, t_ref, self.tau)


def histogram_equalize(frame: IntensityFrame) -> IntensityFrame:
    """Global histogram equalisation through the cumulative histogram.

    ``out = round(255 * (cdf(v) - cdf_min) / (total - cdf_min))``; a frame
    holding a single grey level is returned unchanged.
    """
    px = frame.pixels
    hist = np.bincount(px.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    total = int(cdf[-1])
    cdf_min = int(cdf[np.flatnonzero(hist)[0]]) if total else 0
    if total == cdf_min:
        return IntensityFrame(frame.t, px.copy())
    lut = np.floor(255.0 * (cdf - cdf_min) / (total - cdf_min) + 0.5)
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return IntensityFrame(frame.t, lut[px])


def render_representation(rep, t=None) -> IntensityFrame:
    """Scale a slice, time surface or SITS map linearly onto 8-bit grey."""
    if isinstance(rep, EventSlice):
        px = rep.grid.astype(np.uint8) * 255
        t = rep.t_start if t is None else t
    elif isinstance(rep, TimeSurfaceMap):
        px = np.floor(255.0 * rep.values + 0.5)
        t = rep.t_ref if t is None else t
    elif isinstance(rep, SitsMap):
        px = np.floor(255.0 * rep.values / rep.max_value + 0.5)
        t = 0.0 if t is None else t
    else:
        raise TypeError(f"cannot render {type(rep).__name__}")
    return IntensityFrame(float(t), np.clip(px, 0, 255).astype(np.uint8))
