"""Rotation-only trajectory evaluation.

The absolute pose error of a pair is the geodesic angle between ground truth
and estimate, ``|log(R_gt^T R_est)|``. Estimates are associated with ground
truth by interpolating the ground-truth orientation at each estimate time,
and the whole estimate is rotated so that both trajectories agree on the
first associated frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import so3
from .dataset_io import write_trajectory_csv
from .rotation_estimation import average_nc, fallback_fraction

DEFAULT_MAX_DT = 0.02


@dataclass
class AlignedPair:
    t: float
    R_gt: np.ndarray
    R_est: np.ndarray


def interpolate_orientation(gt_times, gt_rots, t, max_dt=DEFAULT_MAX_DT):
    """Slerp the ground truth at time ``t``; ``None`` outside coverage or across a gap."""
    i = int(np.searchsorted(gt_times, t, side="left"))
    if i < len(gt_times) and gt_times[i] == t:
        return gt_rots[i]
    if i == 0 or i == len(gt_times):
        return None
    t0, t1 = gt_times[i - 1], gt_times[i]
    if t1 - t0 > max_dt:
        return None
    return so3.slerp(gt_rots[i - 1], gt_rots[i], (t - t0) / (t1 - t0))


def associate(traj_est, gt_poses, max_dt=DEFAULT_MAX_DT, align=True):
    """Pair each estimate with interpolated ground truth and anchor frame 0."""
    if len(traj_est) == 0 or len(gt_poses) == 0:
        raise ValueError("both trajectories must be non-empty")
    gt_times = np.array([p.t for p in gt_poses])
    gt_rots = [p.rotation for p in gt_poses]
    pairs = []
    for e in traj_est:
        R_gt = interpolate_orientation(gt_times, gt_rots, e.t, max_dt)
        if R_gt is not None:
            pairs.append(AlignedPair(e.t, R_gt, np.asarray(e.R, dtype=float)))
    if not pairs:
        raise ValueError("estimate and ground truth do not overlap in time")
    if align:
        A = pairs[0].R_gt @ pairs[0].R_est.T
        for p in pairs:
            p.R_est = so3.orthonormalize(A @ p.R_est)
        pairs[0].R_est = pairs[0].R_gt.copy()
    return pairs


def ape(pair_or_gt, R_est=None):
    """Geodesic angle in radians between ground truth and estimate."""
    if R_est is None:
        return so3.geodesic(pair_or_gt.R_gt, pair_or_gt.R_est)
    return so3.geodesic(pair_or_gt, R_est)


def average_ape(pairs):
    pairs = list(pairs)
    if not pairs:
        raise ValueError("average APE of no pairs")
    return float(np.mean([ape(p) for p in pairs]))


def to_euler(R):
    """``(roll, pitch, yaw)`` for ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    return so3.to_euler(R)


def euler_series(pairs):
    """Per-pair Euler angles as arrays ``(t, est (n, 3), gt (n, 3))``."""
    t = np.array([p.t for p in pairs])
    est = np.array([to_euler(p.R_est) for p in pairs])
    gt = np.array([to_euler(p.R_gt) for p in pairs])
    return t, est, gt


def metrics(traj_est, gt_poses, max_dt=DEFAULT_MAX_DT):
    pairs = associate(traj_est, gt_poses, max_dt)
    return {
        "average_ape": average_ape(pairs),
        "average_nc": average_nc(traj_est),
        "fallback_fraction": fallback_fraction(traj_est),
        "n_frames": len(traj_est),
        "n_evaluated": len(pairs),
    }, pairs


def report(traj_est, gt_poses, config_used, out_dir, name="trajectory", max_dt=DEFAULT_MAX_DT, plot=True):
    """Write metrics JSON, trajectory CSV, Euler CSV and an SVG overlay plot.

    Returns the metrics dictionary.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m, pairs = metrics(traj_est, gt_poses, max_dt)
    doc = {"metrics": m, "config": config_used, "euler_convention": "intrinsic ZYX", "max_dt": max_dt}
    (out_dir / f"{name}_metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_trajectory_csv(traj_est, out_dir / f"{name}.csv")
    t, est, gt = euler_series(pairs)
    with open(out_dir / f"{name}_euler.csv", "w", newline="\n") as f:
        f.write("t,roll_est,pitch_est,yaw_est,roll_gt,pitch_gt,yaw_gt,ape\n")
        for k in range(len(t)):
            vals = [*est[k], *gt[k], ape(pairs[k])]
            f.write(f"{t[k]:.9f}," + ",".join(repr(float(v)) for v in vals) + "\n")
    if plot:
        from .plotting import write_svg_plot

        write_svg_plot({"t": t, "estimate": est, "ground_truth": gt}, out_dir / f"{name}_euler.svg", title=name)
    return m
