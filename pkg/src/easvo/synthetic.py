"""Synthetic rotating-camera world with exact ground truth.

A pinhole camera sits at the centre of a textured equirectangular panorama
and rotates with a piecewise-constant body angular velocity, so orientation
is known in closed form. Frames sample the panorama bilinearly; events come
from a contrast-threshold model run on the log radiance at a fine internal
rate.

Camera axes: x right, y down, z forward. Ground-truth orientations are
camera-to-world rotations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage

from . import so3
from .dataset_io import (
    CameraIntrinsics,
    EventStream,
    GroundTruthPose,
    IntensityFrame,
    write_events,
    write_grayscale_png,
    write_ground_truth,
    write_intrinsics,
)

log = logging.getLogger(__name__)

GT_RATE = 200.0
DEFAULT_INTRINSICS = CameraIntrinsics(200.0, 200.0, 119.5, 89.5)

# (wx, wy, wz) in rad/s, camera frame; cycled in 2 s segments
STANDARD_RATES = (
    (0.10, 0.60, 0.00),
    (-0.20, -0.50, 0.30),
    (0.00, 0.75, -0.20),
    (0.30, -0.40, 0.50),
    (-0.20, 0.50, -0.40),
)


def standard_motion(duration, segment=2.0, scale=1.0):
    """Piecewise-constant rates with magnitude at most ``0.8 * scale`` rad/s."""
    script = []
    t = 0.0
    k = 0
    while t < duration:
        script.append((t, tuple(scale * w for w in STANDARD_RATES[k % len(STANDARD_RATES)])))
        t += segment
        k += 1
    return script


def _paint_shapes(albedo, noise, rng, n_shapes):
    height, width = albedo.shape
    for _ in range(n_shapes):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0.15 * height, 0.85 * height)
        sx = rng.uniform(8, 40)
        sy = rng.uniform(8, 40)
        level = rng.choice([0.08, 0.25, 0.75, 0.95])
        ellipse = rng.random() < 0.5
        y0, y1 = int(max(cy - sy, 0)), int(min(cy + sy + 1, height))
        cols = np.arange(int(np.floor(cx - sx)), int(np.ceil(cx + sx)) + 1)
        yy, xx = np.mgrid[y0:y1, 0 : len(cols)]
        dx = cols[xx] - cx
        dy = yy - cy
        if ellipse:
            mask = (dx / sx) ** 2 + (dy / sy) ** 2 < 1.0
        else:
            mask = (np.abs(dx) < sx) & (np.abs(dy) < sy)
        rows = yy[mask]
        wrapped = cols[xx[mask]] % width
        albedo[rows, wrapped] = level + 0.05 * (noise[rows, wrapped] - 0.5)


def make_panorama(width=2048, height=1024, seed=0, n_shapes=400, lighting=None, dim_level=0.03, n_spots=4):
    """Seeded radiance panorama in (0, 1]: smooth noise plus flat shapes.

    ``lighting="spots"`` multiplies the texture by an illumination map that is
    ``dim_level`` almost everywhere with a few lit patches, giving a scene
    whose dark parts a frame camera cannot resolve.
    """
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.standard_normal((height, width)), 4.0, mode="wrap")
    noise = 0.5 + 0.22 * noise / noise.std()
    albedo = noise.copy()
    _paint_shapes(albedo, noise, rng, n_shapes)
    albedo = np.clip(albedo, 0.03, 1.0)
    if lighting is None:
        return albedo
    if lighting != "spots":
        raise ValueError(f"unknown lighting {lighting!r}")
    yy, xx = np.mgrid[0:height, 0:width]
    lit = np.zeros((height, width))
    for _ in range(n_spots):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0.3 * height, 0.7 * height)
        r = rng.uniform(0.04, 0.07) * width
        dx = (xx - cx + width / 2) % width - width / 2
        lit = np.maximum(lit, np.exp(-0.5 * (dx**2 + (yy - cy) ** 2) / r**2))
    gain = dim_level + (1.0 - dim_level) * lit
    return np.clip(albedo * gain, 1e-3, 1.0)


@dataclass
class SyntheticScene:
    panorama: np.ndarray
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    width: int = 240
    height: int = 180
    motion: list = field(default_factory=lambda: standard_motion(10.0))
    duration: float = 10.0
    frame_rate: float = 24.0
    contrast_threshold: float = 0.15
    seed: int = 0
    event_rate: float = 1000.0  # internal sampling rate for event generation, Hz
    noise_rate: float = 0.0  # background events per pixel per second
    translation_jitter: float = 0.01  # metres, recorded in ground truth only
    panorama_radius: float | None = None  # None: panorama at infinite depth

    def __post_init__(self):
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        if not self.contrast_threshold > 0:
            raise ValueError("contrast_threshold must be positive")
        if not self.motion or self.motion[0][0] > 0:
            raise ValueError("motion script must start at t=0")

    # -- kinematics -----------------------------------------------------------

    def _knots(self):
        """Orientation at the start of every motion segment."""
        starts = [float(s) for s, _ in self.motion]
        rots = [np.eye(3)]
        for k in range(1, len(starts)):
            w = np.asarray(self.motion[k - 1][1], dtype=float)
            rots.append(rots[-1] @ so3.exp(w * (starts[k] - starts[k - 1])))
        return starts, rots

    def orientation(self, t):
        """Camera-to-world rotation at time ``t``; exact for constant-rate segments."""
        starts, rots = self._knots()
        k = max(int(np.searchsorted(starts, t, side="right")) - 1, 0)
        w = np.asarray(self.motion[k][1], dtype=float)
        return rots[k] @ so3.exp(w * (t - starts[k]))

    def orientations(self, times):
        starts, rots = self._knots()
        out = []
        for t in times:
            k = max(int(np.searchsorted(starts, t, side="right")) - 1, 0)
            w = np.asarray(self.motion[k][1], dtype=float)
            out.append(rots[k] @ so3.exp(w * (t - starts[k])))
        return out

    def position(self, t):
        """Small smooth translation; only visible with a finite panorama radius."""
        rng = np.random.default_rng(self.seed + 7919)
        phase = rng.uniform(0, 2 * np.pi, 3)
        freq = rng.uniform(0.2, 0.6, 3)
        return self.translation_jitter * np.sin(2 * np.pi * freq * t + phase)

    def frame_times(self):
        n = int(np.floor(self.duration * self.frame_rate + 1e-9))
        return np.arange(n) / self.frame_rate

    def gt_times(self):
        fine = np.arange(int(np.floor(self.duration * GT_RATE + 1e-9)) + 1) / GT_RATE
        return np.unique(np.concatenate([fine, self.frame_times()]))

    # -- rendering ---------------------------------------------------------------

    def camera_rays(self):
        K = self.intrinsics
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def radiance(self, t, rays=None):
        rays = self.camera_rays() if rays is None else rays
        radius = -1.0 if self.panorama_radius is None else float(self.panorama_radius)
        return _render(self.panorama, self.orientation(t), self.position(t), radius, rays)


@numba.njit(cache=True)
def _render(pano, R, c, radius, rays):
    ph, pw = pano.shape
    h, w, _ = rays.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            dx = R[0, 0] * rays[i, j, 0] + R[0, 1] * rays[i, j, 1] + R[0, 2] * rays[i, j, 2]
            dy = R[1, 0] * rays[i, j, 0] + R[1, 1] * rays[i, j, 1] + R[1, 2] * rays[i, j, 2]
            dz = R[2, 0] * rays[i, j, 0] + R[2, 1] * rays[i, j, 1] + R[2, 2] * rays[i, j, 2]
            if radius > 0:
                b = c[0] * dx + c[1] * dy + c[2] * dz
                cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2]
                s = -b + np.sqrt(b * b - cc + radius * radius)
                dx = c[0] + s * dx
                dy = c[1] + s * dy
                dz = c[2] + s * dz
            n = np.sqrt(dx * dx + dy * dy + dz * dz)
            lon = np.arctan2(dx, dz)
            lat = np.arcsin(min(max(dy / n, -1.0), 1.0))
            u = (lon + np.pi) / (2.0 * np.pi) * pw - 0.5
            v = (lat + np.pi / 2.0) / np.pi * ph - 0.5
            v = min(max(v, 0.0), ph - 1.0)
            u0 = int(np.floor(u))
            au = u - u0
            v0 = min(int(v), ph - 2)
            av = v - v0
            u0 = u0 % pw
            u1 = (u0 + 1) % pw
            top = pano[v0, u0] * (1.0 - au) + pano[v0, u1] * au
            bot = pano[v0 + 1, u0] * (1.0 - au) + pano[v0 + 1, u1] * au
            out[i, j] = top * (1.0 - av) + bot * av
    return out


def _to_u8(radiance, gain=255.0):
    return np.clip(np.floor(radiance * gain + 0.5), 0, 255).astype(np.uint8)


def render_frames(scene: SyntheticScene):
    """Frames at ``scene.frame_rate`` and ground-truth poses.

    Poses are emitted at every frame time and on a 200 Hz grid.
    """
    rays = scene.camera_rays()
    frames = [IntensityFrame(float(t), _to_u8(scene.radiance(t, rays))) for t in scene.frame_times()]
    times = scene.gt_times()
    poses = [
        GroundTruthPose(float(t), scene.position(t), so3.matrix_to_quat(R))
        for t, R in zip(times, scene.orientations(times))
    ]
    return frames, poses


def darken(frames, max_value=60, read_noise=0.0, seed=0):
    """Scale 8-bit frames into ``[0, max_value]`` to imitate underexposure.

    ``read_noise`` adds zero-mean Gaussian noise (grey levels, after
    scaling) before requantising, as an underexposed sensor would show.
    """
    s = max_value / 255.0
    rng = np.random.default_rng(seed)
    out = []
    for f in frames:
        v = f.pixels * s
        if read_noise > 0:
            v = v + rng.normal(0.0, read_noise, v.shape)
        out.append(IntensityFrame(f.t, np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)))
    return out


# -- events -------------------------------------------------------------------------


@numba.njit(cache=True)
def _count_crossings(L_prev, L_new, L_ref, C):
    h, w = L_new.shape
    total = 0
    for i in range(h):
        for j in range(w):
            total += int(np.floor(np.abs(L_new[i, j] - L_ref[i, j]) / C))
    return total


@numba.njit(cache=True)
def _emit(L_prev, L_new, L_ref, C, t0, t1, out_t, out_x, out_y, out_p, n):
    h, w = L_new.shape
    for i in range(h):
        for j in range(w):
            diff = L_new[i, j] - L_ref[i, j]
            k = int(np.floor(np.abs(diff) / C))
            if k == 0:
                continue
            sign = 1.0 if diff > 0 else -1.0
            span = L_new[i, j] - L_prev[i, j]
            for m in range(1, k + 1):
                level = L_ref[i, j] + sign * m * C
                if span != 0.0:
                    frac = (level - L_prev[i, j]) / span
                    frac = min(max(frac, 0.0), 1.0)
                else:
                    frac = 1.0
                out_t[n] = t0 + frac * (t1 - t0)
                out_x[n] = j
                out_y[n] = i
                out_p[n] = 1 if sign > 0 else 0
                n += 1
            L_ref[i, j] += sign * k * C
    return n


def generate_events(scene: SyntheticScene, t_end=None):
    """Contrast-threshold events from the continuously rotating camera.

    Each pixel fires whenever its log radiance moves a further ``C`` away
    from its reference level; timestamps are interpolated linearly within
    the internal sampling step. Optional background noise events follow a
    Poisson process. The result is sorted by ``(t, y, x)``.
    """
    t_end = scene.duration if t_end is None else float(t_end)
    steps = max(int(np.ceil(t_end * scene.event_rate)), 1)
    times = np.linspace(0.0, t_end, steps + 1)
    rays = scene.camera_rays()
    C = float(scene.contrast_threshold)
    L_prev = np.log(np.maximum(scene.radiance(0.0, rays), 1e-3))
    L_ref = L_prev.copy()
    cap = 1 << 20
    out_t = np.empty(cap)
    out_x = np.empty(cap, dtype=np.int32)
    out_y = np.empty(cap, dtype=np.int32)
    out_p = np.empty(cap, dtype=np.uint8)
    n = 0
    for k in range(1, steps + 1):
        L_new = np.log(np.maximum(scene.radiance(times[k], rays), 1e-3))
        need = _count_crossings(L_prev, L_new, L_ref, C)
        if n + need > cap:
            while n + need > cap:
                cap *= 2
            out_t = np.resize(out_t, cap)
            out_x = np.resize(out_x, cap)
            out_y = np.resize(out_y, cap)
            out_p = np.resize(out_p, cap)
        n = _emit(L_prev, L_new, L_ref, C, times[k - 1], times[k], out_t, out_x, out_y, out_p, n)
        L_prev = L_new

    t, x, y, p = out_t[:n], out_x[:n], out_y[:n], out_p[:n]
    if scene.noise_rate > 0:
        rng = np.random.default_rng(scene.seed)
        m = int(rng.poisson(scene.noise_rate * scene.width * scene.height * t_end))
        t = np.concatenate([t, rng.uniform(0.0, t_end, m)])
        x = np.concatenate([x, rng.integers(0, scene.width, m).astype(np.int32)])
        y = np.concatenate([y, rng.integers(0, scene.height, m).astype(np.int32)])
        p = np.concatenate([p, rng.integers(0, 2, m).astype(np.uint8)])
    # the text format keeps 9 decimals; quantise now so export is lossless
    t = np.round(t, 9)
    order = np.lexsort((x, y, t))
    return EventStream(t[order], x[order], y[order], p[order], scene.width, scene.height)


def export_dataset(scene: SyntheticScene, out_dir, frames=None, poses=None, events=None):
    """Write the scene in the on-disk dataset layout; returns the directory."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    if frames is None or poses is None:
        frames, poses = render_frames(scene)
    if events is None:
        events = generate_events(scene)
    with open(out_dir / "images.txt", "w", newline="\n") as f:
        for k, fr in enumerate(frames):
            name = f"images/frame_{k:08d}.png"
            write_grayscale_png(fr.pixels, out_dir / name)
            f.write(f"{fr.t:.9f} {name}\n")
    write_events(events, out_dir / "events.txt")
    write_ground_truth(poses, out_dir / "groundtruth.txt")
    write_intrinsics(scene.intrinsics, out_dir / "intrinsics.json")
    log.info("wrote %d frames, %d events, %d poses to %s", len(frames), len(events), len(poses), out_dir)
    return out_dir
