"""Reading and writing the event-camera dataset layout.

A dataset directory contains::

    events.txt       t x y p            (one event per line)
    images.txt       t images/xxx.png   (frame index)
    images/          8-bit grayscale PNG frames
    groundtruth.txt  t px py pz qx qy qz qw
    calib.txt        fx fy cx cy [distortion...]   (optional)

Parsers are strict: every malformed line raises :class:`DataFormatError`
carrying the 1-based line number.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path

import numpy as np
from PIL import Image

from . import so3

log = logging.getLogger(__name__)

EVENT_DTYPE = np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])

TRAJECTORY_HEADER = ["t", "roll", "pitch", "yaw", "qx", "qy", "qz", "qw", "nc", "fallback"]
EULER_NOTE = "# euler: intrinsic Z-Y-X, R = Rz(yaw) Ry(pitch) Rx(roll), radians"


class DataFormatError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, path=None, line=None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path + (f":{line}" if line is not None else "") + ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class Event:
    t: float
    x: int
    y: int
    polarity: bool  # True = ON


class EventStream:
    """Time-ordered events held column-wise.

    ``t``, ``x``, ``y``, ``p`` are parallel numpy arrays; indexing with an int
    gives an :class:`Event`, with a slice gives a sub-stream.
    """

    def __init__(self, t, x, y, p, width, height):
        self.t = np.ascontiguousarray(t, dtype=np.float64)
        self.x = np.ascontiguousarray(x, dtype=np.int32)
        self.y = np.ascontiguousarray(y, dtype=np.int32)
        self.p = np.ascontiguousarray(p, dtype=np.uint8)
        self.width = int(width)
        self.height = int(height)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns differ in length")

    @classmethod
    def empty(cls, width, height):
        return cls(np.empty(0), np.empty(0), np.empty(0), np.empty(0), width, height)

    @classmethod
    def from_events(cls, events, width, height):
        events = list(events)
        return cls(
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [1 if e.polarity else 0 for e in events],
            width,
            height,
        )

    @classmethod
    def concatenate(cls, streams, width, height):
        streams = list(streams)
        if not streams:
            return cls.empty(width, height)
        return cls(
            np.concatenate([s.t for s in streams]),
            np.concatenate([s.x for s in streams]),
            np.concatenate([s.y for s in streams]),
            np.concatenate([s.p for s in streams]),
            width,
            height,
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return EventStream(
                self.t[idx], self.x[idx], self.y[idx], self.p[idx], self.width, self.height
            )
        return Event(float(self.t[idx]), int(self.x[idx]), int(self.y[idx]), bool(self.p[idx]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def shape(self):
        return (self.height, self.width)

    def check(self):
        """Raise ``ValueError`` if any invariant of the stream is violated."""
        if len(self) == 0:
            return
        if self.x.min() < 0 or self.x.max() >= self.width:
            raise ValueError("event x out of sensor bounds")
        if self.y.min() < 0 or self.y.max() >= self.height:
            raise ValueError("event y out of sensor bounds")
        if not np.all(np.isfinite(self.t)) or self.t.min() < 0:
            raise ValueError("event timestamps must be finite and non-negative")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps decrease")


@dataclass
class IntensityFrame:
    t: float
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("frame pixels must be a 2-D grid")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("frame pixels must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class GroundTruthPose:
    t: float
    translation: np.ndarray
    orientation: np.ndarray  # unit quaternion (x, y, z, w), w >= 0

    @property
    def rotation(self):
        return so3.quat_to_matrix(self.orientation)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass
class TrajectoryEntry:
    t: float
    R: np.ndarray
    nc: int = 0
    fallback: bool = False


@dataclass
class RotationTrajectory:
    """World-frame camera orientations, one entry per processed frame."""

    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def append(self, t, R, nc=0, fallback=False):
        self.entries.append(TrajectoryEntry(float(t), np.asarray(R, dtype=float), int(nc), bool(fallback)))

    @property
    def times(self):
        return np.array([e.t for e in self.entries])

    @property
    def rotations(self):
        return np.array([e.R for e in self.entries])


# -- events -----------------------------------------------------------------


def _parse_event_line(line, lineno, path, width, height):
    parts = line.split()
    if len(parts) != 4:
        raise DataFormatError(f"expected 4 fields 't x y p', got {len(parts)}", path, lineno)
    try:
        t = float(parts[0])
        x = int(parts[1])
        y = int(parts[2])
        p = int(parts[3])
    except ValueError:
        raise DataFormatError(f"cannot parse event {line.strip()!r}", path, lineno) from None
    if not math.isfinite(t) or t < 0:
        raise DataFormatError(f"invalid timestamp {parts[0]}", path, lineno)
    if p not in (0, 1):
        raise DataFormatError(f"polarity must be 0 or 1, got {p}", path, lineno)
    if not 0 <= x < width:
        raise DataFormatError(f"x={x} out of bounds for width {width}", path, lineno)
    if not 0 <= y < height:
        raise DataFormatError(f"y={y} out of bounds for height {height}", path, lineno)
    return t, x, y, p


def _scan_events_slow(lines, first_lineno, path, width, height, last_t, slack):
    """Line-by-line parse used to pinpoint the first bad line of a block."""
    for k, line in enumerate(lines):
        if not line.strip():
            continue
        t, *_ = _parse_event_line(line, first_lineno + k, path, width, height)
        if t < last_t - slack:
            raise DataFormatError(
                f"timestamp {t} regresses from previous {last_t}", path, first_lineno + k
            )
        last_t = max(last_t, t)
    raise AssertionError("fast path rejected a block the slow path accepts")


def iter_event_chunks(path, sensor_dims, chunk_lines=500_000, slack=0.0):
    """Yield the events file as successive :class:`EventStream` chunks.

    The iterator holds an open file handle; do not share it between threads.
    """
    width, height = sensor_dims
    path = Path(path)
    last_t = -math.inf
    lineno = 1
    with path.open("r") as f:
        while True:
            lines = list(islice(f, chunk_lines))
            if not lines:
                return
            try:
                block = np.loadtxt(lines, dtype=np.float64, ndmin=2)
            except ValueError:
                _scan_events_slow(lines, lineno, path, width, height, last_t, slack)
            if block.size == 0:
                lineno += len(lines)
                continue
            t, x, y, p = block.T if block.shape[1] == 4 else (None,) * 4
            ok = (
                t is not None
                and np.all(np.isfinite(t))
                and t.min() >= 0
                and np.all(x == np.floor(x))
                and np.all(y == np.floor(y))
                and x.min() >= 0
                and x.max() < width
                and y.min() >= 0
                and y.max() < height
                and np.all((p == 0) | (p == 1))
                and t[0] >= last_t - slack
                and np.all(np.diff(t) >= -slack)
            )
            if not ok:
                _scan_events_slow(lines, lineno, path, width, height, last_t, slack)
            last_t = max(last_t, float(t.max()))
            lineno += len(lines)
            yield EventStream(t, x, y, p, width, height)


def load_events(path, sensor_dims, slack=0.0, t_max=None):
    """Parse an events file (``t x y p`` per line) into an :class:`EventStream`.

    ``slack`` is the tolerated timestamp regression in seconds (strict by
    default). With ``t_max`` only events with ``t <= t_max`` are returned and
    reading stops early.
    """
    width, height = sensor_dims
    chunks = []
    for chunk in iter_event_chunks(path, sensor_dims, slack=slack):
        if t_max is not None and len(chunk) and chunk.t[-1] > t_max:
            chunks.append(chunk[: int(np.searchsorted(chunk.t, t_max, side="right"))])
            break
        chunks.append(chunk)
    return EventStream.concatenate(chunks, width, height)


def write_events(stream, path, chunk=200_000):
    """Write ``t x y p`` lines with nanosecond timestamps."""
    with open(path, "w", newline="\n") as f:
        if len(stream) and stream.t.min() < 0:
            data = np.column_stack([stream.t, stream.x, stream.y, stream.p])
            np.savetxt(f, data, fmt=["%.9f", "%d", "%d", "%d"], delimiter=" ")
            return
        # integer seconds and nanoseconds format much faster than %.9f
        sec, ns = np.divmod(np.round(stream.t * 1e9).astype(np.int64), 1_000_000_000)
        for a in range(0, len(stream), chunk):
            b = a + chunk
            rows = zip(sec[a:b].tolist(), ns[a:b].tolist(), stream.x[a:b].tolist(),
                       stream.y[a:b].tolist(), stream.p[a:b].tolist())
            f.write("".join("%d.%09d %d %d %d\n" % r for r in rows))


# -- frame index, images -------------------------------------------------------


def load_frame_index(path):
    """Parse ``t filename`` lines into an ordered list of ``(t, filename)``."""
    path = Path(path)
    out = []
    with path.open("r") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataFormatError(f"expected 't filename', got {len(parts)} fields", path, lineno)
            try:
                t = float(parts[0])
            except ValueError:
                raise DataFormatError(f"bad timestamp {parts[0]!r}", path, lineno) from None
            if not math.isfinite(t):
                raise DataFormatError(f"bad timestamp {parts[0]!r}", path, lineno)
            if out and t < out[-1][0]:
                raise DataFormatError(f"timestamp {t} earlier than {out[-1][0]}", path, lineno)
            out.append((t, parts[1]))
    return out


def load_grayscale_image(path):
    """Read an 8-bit single-channel PNG/PGM as a ``(height, width)`` uint8 array."""
    path = Path(path)
    with Image.open(path) as im:
        if im.format not in ("PNG", "PPM"):
            raise DataFormatError(f"unsupported image format {im.format}", path)
        if im.mode != "L":
            raise DataFormatError(f"expected 8-bit grayscale, got mode {im.mode!r}", path)
        return np.array(im, dtype=np.uint8)


def write_grayscale_png(pixels, path):
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path, format="PNG")


def load_frames(dataset_dir, index=None, t_max=None):
    dataset_dir = Path(dataset_dir)
    if index is None:
        index = load_frame_index(dataset_dir / "images.txt")
    frames = []
    for t, name in index:
        if t_max is not None and t > t_max:
            break
        frames.append(IntensityFrame(t, load_grayscale_image(dataset_dir / name)))
    return frames


# -- ground truth -------------------------------------------------------------


def load_ground_truth(path, norm_tol=1e-3):
    """Parse ``t px py pz qx qy qz qw`` lines.

    Quaternions within ``norm_tol`` of unit length are renormalised and made
    canonical (w >= 0); anything further off is rejected.
    """
    path = Path(path)
    poses = []
    with path.open("r") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataFormatError(
                    f"expected 8 fields 't px py pz qx qy qz qw', got {len(parts)}", path, lineno
                )
            try:
                vals = [float(v) for v in parts]
            except ValueError:
                raise DataFormatError(f"cannot parse pose {line.strip()!r}", path, lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError("non-finite value in pose", path, lineno)
            q = np.array(vals[4:8])
            norm = float(np.linalg.norm(q))
            if abs(norm - 1.0) > norm_tol:
                raise DataFormatError(f"quaternion norm {norm:.6f} is not unit", path, lineno)
            if poses and vals[0] < poses[-1].t:
                raise DataFormatError(f"timestamp {vals[0]} earlier than {poses[-1].t}", path, lineno)
            poses.append(GroundTruthPose(vals[0], np.array(vals[1:4]), so3.canonical_quat(q)))
    return poses


def write_ground_truth(poses, path):
    with open(path, "w", newline="\n") as f:
        for p in poses:
            vals = [p.t, *p.translation, *p.orientation]
            f.write(" ".join(f"{v:.9f}" for v in vals) + "\n")


# -- intrinsics -----------------------------------------------------------------


def load_intrinsics(path):
    """Read pinhole intrinsics from JSON ``{fx, fy, cx, cy}`` or a ``calib.txt``.

    ``calib.txt`` holds ``fx fy cx cy`` followed by distortion terms, which
    are ignored.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        try:
            d = json.loads(text)
            return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"bad intrinsics: {exc}", path) from None
    parts = text.split()
    if len(parts) < 4:
        raise DataFormatError("calibration needs at least 'fx fy cx cy'", path)
    try:
        return CameraIntrinsics(*(float(v) for v in parts[:4]))
    except ValueError as exc:
        raise DataFormatError(f"bad intrinsics: {exc}", path) from None


def write_intrinsics(intrinsics, path):
    Path(path).write_text(json.dumps(intrinsics.to_dict(), indent=2, sort_keys=True) + "\n")


# -- dataset bundle ---------------------------------------------------------------


@dataclass
class Dataset:
    events: EventStream
    frames: list
    ground_truth: list
    intrinsics: CameraIntrinsics | None


def load_dataset(dataset_dir, t_max=None, intrinsics_path=None):
    """Load a whole dataset directory; sensor size is taken from the frames."""
    dataset_dir = Path(dataset_dir)
    frames = load_frames(dataset_dir, t_max=t_max)
    if not frames:
        raise DataFormatError("dataset has no frames", dataset_dir / "images.txt")
    dims = (frames[0].width, frames[0].height)
    events = load_events(dataset_dir / "events.txt", dims, t_max=None if t_max is None else t_max + 1.0)
    gt = load_ground_truth(dataset_dir / "groundtruth.txt")
    if intrinsics_path is None:
        for name in ("intrinsics.json", "calib.txt"):
            if (dataset_dir / name).exists():
                intrinsics_path = dataset_dir / name
                break
    intrinsics = load_intrinsics(intrinsics_path) if intrinsics_path is not None else None
    log.info(
        "loaded %s: %d frames, %d events, %d poses", dataset_dir, len(frames), len(events), len(gt)
    )
    return Dataset(events, frames, gt, intrinsics)


# -- trajectories -------------------------------------------------------------------


def write_trajectory_csv(traj, path):
    """Write a rotation trajectory as CSV with Euler angles and quaternions."""
    if len(traj) == 0:
        raise ValueError("cannot write an empty trajectory")
    with open(path, "w", newline="") as f:
        f.write(EULER_NOTE + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for e in traj:
            roll, pitch, yaw = so3.to_euler(e.R)
            q = so3.matrix_to_quat(e.R)
            w.writerow(
                [f"{e.t:.9f}", *(repr(float(v)) for v in (roll, pitch, yaw)), *(repr(float(v)) for v in q),
                 e.nc, int(e.fallback)]
            )


def read_trajectory_csv(path):
    path = Path(path)
    traj = RotationTrajectory()
    with path.open("r", newline="") as f:
        rows = csv.reader(line for line in f if not line.startswith("#"))
        header = next(rows, None)
        if header is None or header[:8] != TRAJECTORY_HEADER[:8]:
            raise DataFormatError(f"unexpected trajectory header {header}", path)
        for lineno, row in enumerate(rows, start=3):
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} columns, got {len(row)}", path, lineno)
            try:
                t = float(row[0])
                q = np.array([float(v) for v in row[4:8]])
                nc = int(row[8]) if len(row) > 8 else 0
                fb = bool(int(row[9])) if len(row) > 9 else False
            except ValueError:
                raise DataFormatError(f"cannot parse row {row}", path, lineno) from None
            traj.append(t, so3.quat_to_matrix(q), nc, fb)
    return traj
