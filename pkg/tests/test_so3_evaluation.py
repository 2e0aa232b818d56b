import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from easvo import so3
from easvo.dataset_io import GroundTruthPose, RotationTrajectory
from easvo.evaluation import ape, associate, average_ape, interpolate_orientation, metrics, report, to_euler

from tests.helpers import random_rotation


def quat_log_angle(R1, R2):
    """Independent oracle: angle of the relative rotation from its quaternion."""
    q1 = Rotation.from_matrix(R1).as_quat()
    q2 = Rotation.from_matrix(R2).as_quat()
    # relative quaternion q1^-1 * q2 via scipy, angle = 2 atan2(|v|, |w|)
    rel = (Rotation.from_quat(q1).inv() * Rotation.from_quat(q2)).as_quat()
    return 2.0 * np.arctan2(np.linalg.norm(rel[:3]), abs(rel[3]))


def pose(t, R):
    return GroundTruthPose(t, np.zeros(3), so3.matrix_to_quat(R))


def test_exp_log_against_scipy(rng):
    for _ in range(500):
        w = rng.normal(size=3)
        w *= rng.uniform(0, np.pi - 1e-3) / np.linalg.norm(w)
        R = so3.exp(w)
        np.testing.assert_allclose(R, Rotation.from_rotvec(w).as_matrix(), atol=1e-12)
        np.testing.assert_allclose(so3.log(R), w, atol=1e-9)


def test_log_near_pi_and_zero():
    for w in ([np.pi - 1e-9, 0, 0], [0, 1e-12, 0], [0, 0, 0]):
        R = so3.exp(w)
        assert so3.geodesic(so3.exp(so3.log(R)), R) < 1e-8


def test_quaternion_round_trip(rng):
    for _ in range(200):
        R = random_rotation(rng)
        q = so3.matrix_to_quat(R)
        assert q[3] >= 0
        np.testing.assert_allclose(so3.quat_to_matrix(q), R, atol=1e-12)
        ref = Rotation.from_matrix(R).as_quat()
        assert min(np.abs(q - ref).max(), np.abs(q + ref).max()) < 1e-12


def test_ape_identity_and_planted_angle(rng):
    for _ in range(50):
        R = random_rotation(rng)
        assert ape(R, R) == 0.0
    for axis in np.eye(3):
        assert ape(np.eye(3), so3.exp(0.3 * axis)) == pytest.approx(0.3, abs=1e-9)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    assert ape(np.eye(3), so3.exp(0.3 * axis)) == pytest.approx(0.3, abs=1e-9)


def test_ape_matches_quaternion_oracle(rng):
    for _ in range(1000):
        A, B = random_rotation(rng), random_rotation(rng)
        assert abs(ape(A, B) - quat_log_angle(A, B)) < 1e-9


def test_ape_symmetric_and_left_invariant(rng):
    for _ in range(100):
        A, B, Q = (random_rotation(rng) for _ in range(3))
        assert ape(A, B) == pytest.approx(ape(B, A), abs=1e-12)
        assert ape(Q @ A, Q @ B) == pytest.approx(ape(A, B), abs=1e-12)


def test_average_ape():
    with pytest.raises(ValueError):
        average_ape([])
    R = np.eye(3)
    from easvo.evaluation import AlignedPair

    pairs = [AlignedPair(0.0, R, so3.exp([0, 0, 0.2])), AlignedPair(1.0, R, so3.exp([0.4, 0, 0]))]
    assert average_ape(pairs) == pytest.approx(0.3, abs=1e-12)
    assert average_ape([AlignedPair(0.0, R, R)] * 3) == 0.0


def test_interpolation_endpoints_and_midpoint():
    times = np.array([0.0, 0.01])
    rots = [np.eye(3), so3.exp([0, 0, 0.2])]
    assert interpolate_orientation(times, rots, 0.0) is rots[0]
    assert interpolate_orientation(times, rots, 0.01) is rots[1]
    mid = interpolate_orientation(times, rots, 0.005)
    assert so3.geodesic(mid, so3.exp([0, 0, 0.1])) < 1e-9
    assert interpolate_orientation(times, rots, 0.02) is None
    assert interpolate_orientation(np.array([0.0, 1.0]), rots, 0.5, max_dt=0.02) is None


def test_association_aligns_first_frame(rng):
    Q = random_rotation(rng)
    gt = [pose(0.01 * k, so3.exp([0, 0, 0.01 * k])) for k in range(101)]
    traj = RotationTrajectory()
    for k in range(0, 101, 4):
        traj.append(0.01 * k + 0.002, Q @ so3.exp([0, 0, 0.01 * k + 0.002]))
    pairs = associate(traj, gt)
    np.testing.assert_array_equal(pairs[0].R_gt, pairs[0].R_est)
    assert max(ape(p) for p in pairs) < 1e-9
    m, _ = metrics(traj, gt)
    assert m["average_ape"] < 1e-9


def test_trajectory_against_itself_is_zero(rng):
    rots = [random_rotation(rng) for _ in range(10)]
    gt = [pose(0.1 * k, R) for k, R in enumerate(rots)]
    traj = RotationTrajectory()
    for k, R in enumerate(rots):
        traj.append(0.1 * k, R)
    assert metrics(traj, gt, max_dt=0.2)[0]["average_ape"] < 1e-12


def test_disjoint_times_rejected():
    gt = [pose(0.0, np.eye(3)), pose(0.01, np.eye(3))]
    traj = RotationTrajectory()
    traj.append(5.0, np.eye(3))
    with pytest.raises(ValueError):
        associate(traj, gt)


def test_euler_examples():
    assert to_euler(np.eye(3)) == (0.0, 0.0, 0.0)
    np.testing.assert_allclose(to_euler(so3.exp([0, 0, 0.5])), (0, 0, 0.5), atol=1e-15)


@settings(max_examples=300, deadline=None)
@given(
    st.floats(-np.pi + 1e-6, np.pi - 1e-6),
    st.floats(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3),
    st.floats(-np.pi + 1e-6, np.pi - 1e-6),
)
def test_euler_round_trip(roll, pitch, yaw):
    R = so3.from_euler(roll, pitch, yaw)
    np.testing.assert_allclose(to_euler(R), (roll, pitch, yaw), atol=1e-9)
    # forward composition oracle
    ref = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
    np.testing.assert_allclose(R, ref, atol=1e-12)


@pytest.mark.parametrize("pitch", [np.pi / 2, -np.pi / 2])
def test_euler_gimbal_lock_reproduces_rotation(pitch):
    R = so3.from_euler(0.4, pitch, -1.1)
    r, p, y = to_euler(R)
    assert r == 0.0
    np.testing.assert_allclose(so3.from_euler(r, p, y), R, atol=1e-9)


def test_report_outputs(tmp_path, rng):
    gt = [pose(0.01 * k, so3.exp([0.0, 0.01 * k, 0.0])) for k in range(50)]
    traj = RotationTrajectory()
    for k in range(0, 50, 5):
        traj.append(0.01 * k, so3.exp([0.0, 0.011 * k, 0.0]), nc=30, fallback=False)
    m = report(traj, gt, {"seed": 1}, tmp_path, "run")
    for name in ("run_metrics.json", "run.csv", "run_euler.csv", "run_euler.svg"):
        assert (tmp_path / name).exists()
    assert m["average_nc"] == 30.0
    first = (tmp_path / "run_euler.svg").read_bytes()
    report(traj, gt, {"seed": 1}, tmp_path, "run")
    assert (tmp_path / "run_euler.svg").read_bytes() == first
