"""Shi-Tomasi corners and pyramidal Lucas-Kanade tracking.

Coordinates are ``(x, y)`` in pixels with the centre of the top-left pixel
at ``(0, 0)``. Gradients are 3x3 Sobel responses divided by 8, i.e. grey
levels per pixel, with mirrored borders.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numba
import numpy as np
from scipy import ndimage

from .dataset_io import IntensityFrame


@dataclass(frozen=True)
class DetectorConfig:
    max_corners: int = 400
    quality_level: float = 0.01
    min_distance: float = 8.0
    block_size: int = 3

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TrackerConfig:
    pyramid_levels: int = 3
    window: int = 21
    max_iters: int = 30
    eps: float = 0.01
    fb_threshold: float | None = 1.0  # None disables the forward-backward check
    min_eigenvalue: float = 1e-4  # mean per-pixel min eigenvalue, (grey/px)^2

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class Corner:
    x: float
    y: float
    score: float


@dataclass
class CorrespondenceSet:
    prev_points: np.ndarray  # (n, 2)
    next_points: np.ndarray  # (n, 2)
    indices: np.ndarray  # row of each pair in the input point list
    frame_t_prev: float = 0.0
    frame_t_next: float = 0.0

    def __len__(self):
        return len(self.prev_points)

    @property
    def pairs(self):
        return [
            (tuple(map(float, a)), tuple(map(float, b)))
            for a, b in zip(self.prev_points, self.next_points)
        ]


def _as_float(img):
    if isinstance(img, IntensityFrame):
        img = img.pixels
    return np.asarray(img, dtype=np.float64)


def gradients(img):
    """Sobel derivatives ``(gx, gy)`` in grey levels per pixel."""
    img = _as_float(img)
    gx = ndimage.sobel(img, axis=1, mode="mirror") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="mirror") / 8.0
    return gx, gy


def min_eigenvalue_map(img, block_size=3):
    """Smaller eigenvalue of the block-summed structure tensor at each pixel."""
    gx, gy = gradients(img)
    size = block_size
    a = ndimage.uniform_filter(gx * gx, size, mode="mirror") * size * size
    b = ndimage.uniform_filter(gx * gy, size, mode="mirror") * size * size
    c = ndimage.uniform_filter(gy * gy, size, mode="mirror") * size * size
    half_tr = (a + c) / 2.0
    return np.maximum(half_tr - np.sqrt(((a - c) / 2.0) ** 2 + b * b), 0.0)


def detect_corners(frame, max_corners=400, quality_level=0.01, min_distance=8.0, block_size=3):
    """Shi-Tomasi "good features to track", strongest first.

    Candidates are 3x3 local maxima of the min-eigenvalue response that reach
    ``quality_level`` times the global maximum; a greedy pass then keeps
    corners at least ``min_distance`` apart. Positions are refined to
    subpixel precision with a parabola fit of the response.
    """
    resp = min_eigenvalue_map(frame, block_size)
    peak = float(resp.max()) if resp.size else 0.0
    if peak <= 0.0 or max_corners < 1:
        return []
    is_max = resp == ndimage.maximum_filter(resp, size=3, mode="constant", cval=-1.0)
    ys, xs = np.nonzero(is_max & (resp >= quality_level * peak) & (resp > 0))
    scores = resp[ys, xs]
    order = np.lexsort((xs, ys, -scores))

    h, w = resp.shape
    cell = max(float(min_distance), 1.0)
    grid = {}
    kept = []
    d2 = float(min_distance) ** 2
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        gx, gy = int(x // cell), int(y // cell)
        ok = True
        for cy in range(gy - 1, gy + 2):
            for cx in range(gx - 1, gx + 2):
                for ox, oy in grid.get((cx, cy), ()):
                    if (ox - x) ** 2 + (oy - y) ** 2 < d2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if not ok:
            continue
        grid.setdefault((gx, gy), []).append((x, y))
        kept.append((x, y, float(scores[i])))
        if len(kept) >= max_corners:
            break

    corners = []
    for x, y, s in kept:
        dx = dy = 0.0
        if 0 < x < w - 1:
            dx = _parabola_peak(resp[y, x - 1], resp[y, x], resp[y, x + 1])
        if 0 < y < h - 1:
            dy = _parabola_peak(resp[y - 1, x], resp[y, x], resp[y + 1, x])
        corners.append(Corner(x + dx, y + dy, s))
    return corners


def _parabola_peak(left, centre, right):
    denom = left - 2.0 * centre + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def corners_to_array(corners):
    return np.array([[c.x, c.y] for c in corners], dtype=np.float64).reshape(-1, 2)


# -- Lucas-Kanade ------------------------------------------------------------------

_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def build_pyramid(img, levels):
    pyr = [_as_float(img)]
    for _ in range(levels - 1):
        prev = pyr[-1]
        if min(prev.shape) < 8:
            break
        blur = ndimage.convolve1d(prev, _PYR_KERNEL, axis=0, mode="mirror")
        blur = ndimage.convolve1d(blur, _PYR_KERNEL, axis=1, mode="mirror")
        pyr.append(blur[::2, ::2])
    return pyr


@numba.njit(cache=True)
def _bilinear(img, x, y):
    h, w = img.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0 = min(int(x), w - 2) if w > 1 else 0
    y0 = min(int(y), h - 2) if h > 1 else 0
    ax = x - x0
    ay = y - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - ax) + img[y0, x1] * ax
    bot = img[y1, x0] * (1.0 - ax) + img[y1, x1] * ax
    return top * (1.0 - ay) + bot * ay


@numba.njit(cache=True)
def _lk_level(I, J, gx, gy, pts, guess, ok, r, max_iters, eps, min_eig):
    """One pyramid level of iterative LK; returns the per-point increment."""
    h, w = I.shape
    n = pts.shape[0]
    side = 2 * r + 1
    area = side * side
    out = np.zeros((n, 2))
    T = np.empty(area)
    GX = np.empty(area)
    GY = np.empty(area)
    for i in range(n):
        if not ok[i]:
            continue
        px = pts[i, 0]
        py = pts[i, 1]
        a = 0.0
        b = 0.0
        c = 0.0
        k = 0
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                T[k] = _bilinear(I, px + dx, py + dy)
                u = _bilinear(gx, px + dx, py + dy)
                v = _bilinear(gy, px + dx, py + dy)
                GX[k] = u
                GY[k] = v
                a += u * u
                b += u * v
                c += v * v
                k += 1
        det = a * c - b * b
        lam = ((a + c) / 2.0 - np.sqrt(((a - c) / 2.0) ** 2 + b * b)) / area
        if det <= 0.0 or lam < min_eig:
            ok[i] = False
            continue
        vx = 0.0
        vy = 0.0
        for _ in range(max_iters):
            qx = px + guess[i, 0] + vx
            qy = py + guess[i, 1] + vy
            if qx < -r or qx > w - 1 + r or qy < -r or qy > h - 1 + r:
                ok[i] = False
                break
            bx = 0.0
            by = 0.0
            k = 0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    d = T[k] - _bilinear(J, qx + dx, qy + dy)
                    bx += d * GX[k]
                    by += d * GY[k]
                    k += 1
            ex = (c * bx - b * by) / det
            ey = (a * by - b * bx) / det
            vx += ex
            vy += ey
            if ex * ex + ey * ey < eps * eps:
                break
        out[i, 0] = vx
        out[i, 1] = vy
    return out


class _Level:
    __slots__ = ("I", "J", "gx", "gy")

    def __init__(self, I, J):
        self.I = I
        self.J = J
        self.gx, self.gy = gradients(I)


def _lk(levels, points, cfg):
    """Coarse-to-fine LK for all points; returns ``(next_points, ok)``."""
    n = len(points)
    ok = np.ones(n, dtype=np.bool_)
    guess = np.zeros((n, 2))
    flow = np.zeros((n, 2))
    r = cfg.window // 2
    for L in range(len(levels) - 1, -1, -1):
        lvl = levels[L]
        p = np.ascontiguousarray(points / 2.0**L)
        v = _lk_level(lvl.I, lvl.J, lvl.gx, lvl.gy, p, guess, ok, r, cfg.max_iters, cfg.eps, cfg.min_eigenvalue)
        if L > 0:
            guess = 2.0 * (guess + v)
        else:
            flow = guess + v
    nxt = points + flow
    h, w = levels[0].I.shape
    inside = (nxt[:, 0] >= 0) & (nxt[:, 0] <= w - 1) & (nxt[:, 1] >= 0) & (nxt[:, 1] <= h - 1)
    return nxt, ok & inside & np.all(np.isfinite(nxt), axis=1)


def track_lk(prev_frame, next_frame, points, cfg: TrackerConfig | None = None, **overrides):
    """Track ``points`` from ``prev_frame`` into ``next_frame``.

    Points are dropped when their structure tensor is too weak, when they
    leave the image, or when tracking back from the result misses the start
    by more than ``cfg.fb_threshold`` pixels.
    """
    cfg = cfg or TrackerConfig()
    if overrides:
        cfg = TrackerConfig(**{**cfg.to_dict(), **overrides})
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    t_prev = getattr(prev_frame, "t", 0.0)
    t_next = getattr(next_frame, "t", 0.0)
    I = _as_float(prev_frame)
    J = _as_float(next_frame)
    if I.shape != J.shape:
        raise ValueError("frames differ in size")
    h, w = I.shape
    in_bounds = (pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)
    pts_in = pts[in_bounds]
    if len(pts_in) == 0:
        return CorrespondenceSet(np.empty((0, 2)), np.empty((0, 2)), np.empty(0, dtype=int), t_prev, t_next)

    pyr_I = build_pyramid(I, cfg.pyramid_levels)
    pyr_J = build_pyramid(J, cfg.pyramid_levels)
    fwd = [_Level(a, b) for a, b in zip(pyr_I, pyr_J)]
    nxt, ok = _lk(fwd, pts_in, cfg)
    if cfg.fb_threshold is not None and ok.any():
        bwd = [_Level(b, a) for a, b in zip(pyr_I, pyr_J)]
        sel = np.flatnonzero(ok)
        back, ok_b = _lk(bwd, nxt[sel], cfg)
        err = np.linalg.norm(back - pts_in[sel], axis=1)
        ok[sel[~(ok_b & (err <= cfg.fb_threshold))]] = False
    src = np.flatnonzero(in_bounds)
    return CorrespondenceSet(pts_in[ok], nxt[ok], src[ok], t_prev, t_next)
