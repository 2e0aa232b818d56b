"""Frame sequences for each input source compared by the pipeline.

Every source yields one 8-bit frame per intensity-frame timestamp, so all of
them go through the same tracking and estimation path:

``original``  the intensity frames as recorded
``enhanced``  histogram-equalised intensity frames
``slice``     binary event slice of the ``n`` events starting at the frame time
``ts``        time surface over all events up to the end of that slice
``sits``      speed-invariant time surface over the same events
``eas``       intensity frame fused with the slice (see :mod:`easvo.fusion`)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset_io import EventStream, IntensityFrame
from .fusion import FusionConfig, fuse_sequence
from .representations import (
    DEFAULT_N_EVENTS,
    DEFAULT_RADIUS,
    DEFAULT_TAU,
    InsufficientEventsError,
    SitsBuilder,
    TimeSurfaceBuilder,
    histogram_equalize,
    render_representation,
    slice_for_frame,
)

SOURCES = ("original", "enhanced", "slice", "ts", "sits", "eas")


class UnknownSourceError(ValueError):
    pass


@dataclass(frozen=True)
class RepresentationConfig:
    n_events: int = DEFAULT_N_EVENTS
    tau: float = DEFAULT_TAU
    radius: int = DEFAULT_RADIUS

    def __post_init__(self):
        if self.n_events < 1:
            raise ValueError("n_events must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")

    def to_dict(self):
        return asdict(self)


def check_sources(names):
    names = list(names)
    if not names:
        raise UnknownSourceError("nothing to run: no sources given")
    bad = [n for n in names if n not in SOURCES]
    if bad:
        raise UnknownSourceError(f"unknown source(s) {', '.join(bad)}; valid: {', '.join(SOURCES)}")
    return names


def _window_end(stream, t, n):
    """Index one past the last event of the frame-aligned slice at ``t``."""
    start = int(np.searchsorted(stream.t, t, side="left"))
    return min(start + n, len(stream))


def _blank(frame):
    return IntensityFrame(frame.t, np.zeros_like(frame.pixels))


def event_frames(kind, frames, stream: EventStream, cfg: RepresentationConfig):
    """Render ``slice``, ``ts`` or ``sits`` at every frame timestamp.

    Frames with no events after them get a black image.
    """
    out = []
    if kind == "slice":
        for f in frames:
            try:
                es = slice_for_frame(stream, f.t, cfg.n_events)
            except InsufficientEventsError:
                out.append(_blank(f))
                continue
            out.append(render_representation(es, f.t))
        return out

    if kind == "ts":
        builder = TimeSurfaceBuilder(stream.width, stream.height, cfg.tau)
    elif kind == "sits":
        builder = SitsBuilder(stream.width, stream.height, cfg.radius)
    else:
        raise UnknownSourceError(f"not an event representation: {kind!r}")
    done = 0
    for f in frames:
        stop = max(_window_end(stream, f.t, cfg.n_events), done)
        builder.update(stream, done, stop)
        done = stop
        if kind == "ts":
            # reference time: the newest event seen, or the frame time if later
            t_ref = max(float(stream.t[stop - 1]) if stop else f.t, f.t)
            out.append(render_representation(builder.surface(t_ref), f.t))
        else:
            out.append(render_representation(builder.snapshot(), f.t))
    return out


def build_source(name, frames, stream: EventStream, fusion: FusionConfig, rep: RepresentationConfig):
    """Frame sequence for one source name."""
    check_sources([name])
    if name == "original":
        return list(frames)
    if name == "enhanced":
        return [histogram_equalize(f) for f in frames]
    if name == "eas":
        return [f.as_frame() for f in fuse_sequence(frames, stream, fusion)]
    return event_frames(name, frames, stream, rep)
