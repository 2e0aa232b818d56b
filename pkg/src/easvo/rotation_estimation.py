"""Frame-to-frame rotation from tracked corners, chained into a trajectory.

For every adjacent frame pair: track corners, fit an essential matrix with
RANSAC, split it by SVD and keep the rotation whose triangulated points lie
in front of both cameras. Pairs with fewer than ``threshold1``
correspondences repeat the previous orientation; below ``threshold2``
corners are re-detected on the newer frame.

Convention: ``recover_rotation`` returns ``R`` with ``x_next ~ R x_prev + t``
(previous-camera coordinates to next-camera coordinates). The camera-to-world
orientation is updated as ``R_world_next = R_world_prev @ R.T``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import so3
from .dataset_io import CameraIntrinsics, IntensityFrame, RotationTrajectory
from .tracking import DetectorConfig, TrackerConfig, corners_to_array, detect_corners, track_lk

log = logging.getLogger(__name__)

SOLVER_NAME = "normalized-eight-point+essential-projection"
MIN_SAMPLE = 8

__all__ = [
    "CameraIntrinsics",
    "DegenerateGeometryError",
    "EssentialEstimate",
    "PipelineConfig",
    "RotationTrajectory",
    "average_nc",
    "denormalize_points",
    "epipolar_distance",
    "estimate_essential",
    "normalize_points",
    "recover_rotation",
    "run_pipeline",
]


class DegenerateGeometryError(RuntimeError):
    """Correspondences do not determine a rotation; callers fall back."""


@dataclass
class EssentialEstimate:
    E: np.ndarray
    inliers: np.ndarray  # indices into the correspondence arrays


@dataclass(frozen=True)
class PipelineConfig:
    threshold1: int = 15  # below this the pair is not used for estimation
    threshold2: int = 50  # below this corners are re-detected on the newer frame
    ransac_iters: int = 500
    ransac_threshold: float = 1e-3
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    def __post_init__(self):
        if self.threshold1 < 5 or self.threshold2 < 5:
            raise ValueError("threshold1 and threshold2 must be >= 5")
        if self.ransac_iters < 1 or not self.ransac_threshold > 0:
            raise ValueError("ransac_iters must be >= 1 and ransac_threshold > 0")

    def to_dict(self):
        d = asdict(self)
        d["solver"] = SOLVER_NAME
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("solver", None)
        det = DetectorConfig(**d.pop("detector", {}))
        trk = TrackerConfig(**d.pop("tracker", {}))
        return cls(detector=det, tracker=trk, **d)


# -- coordinates ---------------------------------------------------------------


def normalize_points(points, intrinsics: CameraIntrinsics):
    """Pixel ``(u, v)`` -> normalised image coordinates ``((u-cx)/fx, (v-cy)/fy)``."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return np.column_stack([(p[:, 0] - intrinsics.cx) / intrinsics.fx, (p[:, 1] - intrinsics.cy) / intrinsics.fy])


def denormalize_points(points, intrinsics: CameraIntrinsics):
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return np.column_stack([p[:, 0] * intrinsics.fx + intrinsics.cx, p[:, 1] * intrinsics.fy + intrinsics.cy])


def _homog(p):
    return np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)


# -- essential matrix -------------------------------------------------------------


def _project_essential(E):
    """Nearest essential matrix: singular values ``(s, s, 0)``, s = mean of top two."""
    U, S, Vt = np.linalg.svd(E)
    s = (S[..., 0] + S[..., 1]) / 2.0
    D = np.zeros(S.shape)
    D[..., 0] = s
    D[..., 1] = s
    return (U * D[..., None, :]) @ Vt


def _eight_point(x1, x2):
    """Linear fit of E to ``(..., n, 2)`` point sets, projected to the manifold."""
    a1 = x1[..., 0]
    b1 = x1[..., 1]
    a2 = x2[..., 0]
    b2 = x2[..., 1]
    one = np.ones_like(a1)
    A = np.stack([a2 * a1, a2 * b1, a2, b2 * a1, b2 * b1, b2, a1, b1, one], axis=-1)
    if A.shape[-2] < 9:
        # pad so SVD returns the full 9-dim right basis
        pad = np.zeros(A.shape[:-2] + (9 - A.shape[-2], 9))
        A = np.concatenate([A, pad], axis=-2)
    _, _, Vt = np.linalg.svd(A)
    E = Vt[..., -1, :].reshape(A.shape[:-2] + (3, 3))
    return _project_essential(E)


def epipolar_distance(E, x1, x2):
    """Mean distance of each point to the epipolar line of its partner.

    Works on a single ``E`` with ``(n, 2)`` points or on a stack of models
    ``(m, 3, 3)`` giving an ``(m, n)`` array. Normalised image units.
    """
    h1 = _homog(np.asarray(x1, dtype=np.float64))
    h2 = _homog(np.asarray(x2, dtype=np.float64))
    l2 = np.einsum("...ij,nj->...ni", E, h1)  # lines in image 2
    l1 = np.einsum("...ji,nj->...ni", E, h2)  # lines in image 1
    r = np.abs(np.einsum("ni,...ni->...n", h2, l2))
    n2 = np.hypot(l2[..., 0], l2[..., 1])
    n1 = np.hypot(l1[..., 0], l1[..., 1])
    tiny = 1e-300
    return 0.5 * r * (1.0 / np.maximum(n2, tiny) + 1.0 / np.maximum(n1, tiny))


def estimate_essential(x1, x2, ransac_iters=500, ransac_threshold=1e-3, rng=None, min_inliers=MIN_SAMPLE):
    """RANSAC fit of the essential matrix to normalised correspondences.

    Minimal models come from eight-point samples and are ranked by the MSAC
    cost; the winner is refit on its inliers while that lowers the cost.
    """
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1, 2)
    n = len(x1)
    if n < MIN_SAMPLE or len(x2) != n:
        raise DegenerateGeometryError(f"need at least {MIN_SAMPLE} correspondences, got {n}")
    rng = np.random.default_rng(0) if rng is None else rng

    samples = np.argsort(rng.random((ransac_iters, n)), axis=1)[:, :MIN_SAMPLE]
    models = _eight_point(x1[samples], x2[samples])
    dist = epipolar_distance(models, x1, x2)
    thr2 = ransac_threshold**2
    # MSAC: truncated quadratic cost ranks models, not the raw inlier count
    costs = np.minimum(dist**2, thr2).sum(axis=1)
    best = int(np.argmin(costs))
    inliers = np.flatnonzero(dist[best] < ransac_threshold)
    if len(inliers) < min_inliers:
        raise DegenerateGeometryError("no model reached the minimal inlier count")
    E, cost = models[best], costs[best]

    for _ in range(5):
        E_ref = _eight_point(x1[inliers], x2[inliers])
        d = epipolar_distance(E_ref, x1, x2)
        cost_ref = np.minimum(d**2, thr2).sum()
        if cost_ref >= cost:
            break
        E, cost = E_ref, cost_ref
        inliers = np.flatnonzero(d < ransac_threshold)
        if len(inliers) < min_inliers:
            break

    # Trim consensus members far outside the robust noise scale; a gross
    # outlier that happens to sit inside the band otherwise biases the fit.
    for _ in range(5):
        d = epipolar_distance(E, x1[inliers], x2[inliers])
        cut = min(ransac_threshold, max(4.0 * 1.4826 * float(np.median(d)), 1e-12))
        keep = inliers[d < cut]
        if len(keep) == len(inliers) or len(keep) < min_inliers:
            break
        inliers = keep
        E = _eight_point(x1[inliers], x2[inliers])
    if len(inliers) < min_inliers:
        raise DegenerateGeometryError("refit lost the consensus set")
    return EssentialEstimate(E, inliers)


# -- decomposition ----------------------------------------------------------------


def _depths(R, t, x1, x2):
    """Least-squares depths ``(z1, z2)`` of each ray pair under pose ``(R, t)``."""
    a = _homog(x1) @ R.T  # R x1
    b = _homog(x2)
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    ab = np.einsum("ij,ij->i", a, b)
    at = a @ t
    bt = b @ t
    det = aa * bb - ab * ab
    with np.errstate(divide="ignore", invalid="ignore"):
        # minimise |l1 R x1 + t - l2 x2|^2 over (l1, l2)
        l1 = (-at * bb + ab * bt) / det
        l2 = (aa * bt - ab * at) / det
    return l1, l2


def pose_candidates(E):
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def recover_rotation(E, x1, x2, return_translation=False):
    """Rotation part of ``E`` selected by the cheirality vote of ``(x1, x2)``.

    Raises :class:`DegenerateGeometryError` when no candidate puts a single
    point in front of both cameras.
    """
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1, 2)
    best, best_count = None, 0
    for R, t in pose_candidates(E):
        z1, z2 = _depths(R, t, x1, x2)
        count = int(np.sum((z1 > 0) & (z2 > 0)))
        if count > best_count:
            best, best_count = (R, t), count
    if best is None:
        raise DegenerateGeometryError("no pose candidate passes the cheirality test")
    R = so3.orthonormalize(best[0])
    if return_translation:
        return R, best[1]
    return R


# -- pipeline ---------------------------------------------------------------------


def _pixels(frame):
    return frame.pixels if isinstance(frame, IntensityFrame) else np.asarray(frame)


def _detect(frame, det: DetectorConfig):
    return corners_to_array(
        detect_corners(_pixels(frame), det.max_corners, det.quality_level, det.min_distance, det.block_size)
    )


def relative_rotation(corr, intrinsics, cfg: PipelineConfig, rng):
    x1 = normalize_points(corr.prev_points, intrinsics)
    x2 = normalize_points(corr.next_points, intrinsics)
    est = estimate_essential(x1, x2, cfg.ransac_iters, cfg.ransac_threshold, rng)
    return recover_rotation(est.E, x1[est.inliers], x2[est.inliers]), est


def run_pipeline(frames, cfg: PipelineConfig, intrinsics: CameraIntrinsics, seed=0, on_pair=None):
    """Estimate the camera-to-world rotation of every frame.

    The first frame defines the world frame (identity). ``on_pair`` is called
    as ``on_pair(index, correspondences)`` for every tracked pair.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    rng = np.random.default_rng(seed)
    traj = RotationTrajectory()
    R_world = np.eye(3)
    traj.append(getattr(frames[0], "t", 0.0), R_world, 0, False)
    pts = _detect(frames[0], cfg.detector)

    for k in range(1, len(frames)):
        prev, nxt = frames[k - 1], frames[k]
        corr = track_lk(_pixels(prev), _pixels(nxt), pts, cfg.tracker)
        corr.frame_t_prev = getattr(prev, "t", 0.0)
        corr.frame_t_next = getattr(nxt, "t", 0.0)
        if on_pair is not None:
            on_pair(k, corr)
        nc = len(corr)
        fallback = True
        if nc >= cfg.threshold1:
            try:
                R_rel, _ = relative_rotation(corr, intrinsics, cfg, rng)
            except DegenerateGeometryError as exc:
                log.debug("pair %d: %s", k, exc)
            else:
                R_world = so3.orthonormalize(R_world @ R_rel.T)
                fallback = False
        traj.append(corr.frame_t_next, R_world, nc, fallback)
        if nc < cfg.threshold2:
            pts = _detect(nxt, cfg.detector)
        else:
            pts = corr.next_points
    return traj


def average_nc(traj):
    """Mean correspondence count over frame pairs (the first entry has none)."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    ncs = [e.nc for e in traj.entries[1:]] or [traj.entries[0].nc]
    return float(np.mean(ncs))


def fallback_fraction(traj):
    pairs = traj.entries[1:]
    return float(np.mean([e.fallback for e in pairs])) if pairs else 0.0
