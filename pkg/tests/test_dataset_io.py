import numpy as np
import pytest
from PIL import Image

from easvo import so3
from easvo.dataset_io import (
    CameraIntrinsics,
    DataFormatError,
    Event,
    EventStream,
    GroundTruthPose,
    RotationTrajectory,
    load_events,
    load_frame_index,
    load_grayscale_image,
    load_ground_truth,
    load_intrinsics,
    read_trajectory_csv,
    write_events,
    write_trajectory_csv,
)

from tests.helpers import make_stream, random_rotation


def test_event_line_from_dataset_format(tmp_path):
    p = tmp_path / "events.txt"
    p.write_text("0.003811000 96 133 0\n")
    ev = load_events(p, (240, 180))
    assert len(ev) == 1
    e = ev[0]
    assert e.t == pytest.approx(0.003811, abs=1e-12)
    assert (e.x, e.y, e.polarity) == (96, 133, False)


def test_empty_events_file(tmp_path):
    p = tmp_path / "events.txt"
    p.write_text("")
    assert len(load_events(p, (240, 180))) == 0


def test_x_out_of_bounds_reports_line(tmp_path):
    p = tmp_path / "events.txt"
    p.write_text("0.1 10 10 1\n0.5 240 10 1\n")
    with pytest.raises(DataFormatError) as err:
        load_events(p, (240, 180))
    assert err.value.line == 2
    assert "x=240" in str(err.value)


@pytest.mark.parametrize("line", ["0.1 1 2", "0.1 1 2 1 5", "abc 1 2 1", "0.1 1 2 3", "-0.1 1 1 1"])
def test_malformed_event_lines(tmp_path, line):
    p = tmp_path / "events.txt"
    p.write_text("0.0 0 0 0\n" + line + "\n")
    with pytest.raises(DataFormatError) as err:
        load_events(p, (240, 180))
    assert err.value.line == 2


def test_event_timestamp_regression_is_an_error(tmp_path):
    p = tmp_path / "events.txt"
    p.write_text("0.2 1 1 1\n0.1 1 1 1\n")
    with pytest.raises(DataFormatError):
        load_events(p, (240, 180))
    assert len(load_events(p, (240, 180), slack=0.2)) == 2


def test_k_lines_give_k_events_across_chunks(tmp_path, rng):
    s = make_stream(rng, 1234)
    p = tmp_path / "ev.txt"
    write_events(s, p)
    from easvo.dataset_io import iter_event_chunks

    chunks = list(iter_event_chunks(p, (16, 12), chunk_lines=100))
    assert sum(len(c) for c in chunks) == 1234
    back = load_events(p, (16, 12))
    np.testing.assert_allclose(back.t, s.t, atol=5e-10)
    np.testing.assert_array_equal(back.x, s.x)
    np.testing.assert_array_equal(back.p, s.p)


def test_load_events_t_max(tmp_path):
    p = tmp_path / "ev.txt"
    p.write_text("".join(f"{0.1 * k:.9f} 1 1 1\n" for k in range(10)))
    assert len(load_events(p, (4, 4), t_max=0.45)) == 5


def test_stream_slicing():
    s = EventStream.from_events([Event(0.0, 1, 2, True), Event(0.5, 3, 4, False)], 8, 8)
    assert s[1].polarity is False
    assert len(s[0:1]) == 1


def test_frame_index(tmp_path):
    p = tmp_path / "images.txt"
    p.write_text("0.040000 images/frame_00000001.png\n")
    assert load_frame_index(p) == [(0.04, "images/frame_00000001.png")]
    p.write_text("")
    assert load_frame_index(p) == []
    p.write_text("0.2 a.png\n0.1 b.png\n")
    with pytest.raises(DataFormatError):
        load_frame_index(p)


def test_ground_truth_identity_and_norms(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("0.010 0 0 0 0 0 0 1\n")
    (pose,) = load_ground_truth(p)
    assert pose.t == 0.01
    np.testing.assert_array_equal(pose.rotation, np.eye(3))

    p.write_text("0.0 0 0 0 0 0 0 0.9\n")
    with pytest.raises(DataFormatError):
        load_ground_truth(p)

    p.write_text("0.0 0 0 0 0 0 0 1.0005\n")
    (pose,) = load_ground_truth(p)
    assert np.linalg.norm(pose.orientation) == pytest.approx(1.0, abs=1e-12)


def test_ground_truth_canonical_sign(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("0.0 0 0 0 0 0 0.6 -0.8\n")
    (pose,) = load_ground_truth(p)
    np.testing.assert_allclose(pose.orientation, [0, 0, -0.6, 0.8])


def test_pgm_bytes(tmp_path):
    p = tmp_path / "f.pgm"
    p.write_bytes(b"P5 2 2 255\n" + bytes([0, 128, 255, 7]))
    np.testing.assert_array_equal(load_grayscale_image(p), [[0, 128], [255, 7]])


def test_16bit_and_rgb_png_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(tmp_path / "a.png")
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "b.png")
    for name in ("a.png", "b.png"):
        with pytest.raises(DataFormatError):
            load_grayscale_image(tmp_path / name)


def test_intrinsics_json_and_calib(tmp_path):
    (tmp_path / "i.json").write_text('{"fx": 200, "fy": 201, "cx": 119.5, "cy": 89.5}')
    assert load_intrinsics(tmp_path / "i.json") == CameraIntrinsics(200, 201, 119.5, 89.5)
    (tmp_path / "calib.txt").write_text("199.1 199.2 132.2 110.9 -0.3 0.1 0 0 0\n")
    k = load_intrinsics(tmp_path / "calib.txt")
    assert (k.fx, k.cy) == (199.1, 110.9)


def test_trajectory_csv_round_trip(tmp_path, rng):
    traj = RotationTrajectory()
    for k in range(20):
        traj.append(0.05 * k, random_rotation(rng), nc=k, fallback=k % 3 == 0)
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1].startswith("t,roll,pitch,yaw,qx,qy,qz,qw")
    back = read_trajectory_csv(path)
    assert len(back) == 20
    for a, b in zip(traj, back):
        assert so3.geodesic(a.R, b.R) < 1e-9
        assert (a.nc, a.fallback) == (b.nc, b.fallback)


def test_empty_trajectory_not_written(tmp_path):
    with pytest.raises(ValueError):
        write_trajectory_csv(RotationTrajectory(), tmp_path / "t.csv")


def test_ground_truth_pose_rotation_property():
    q = so3.matrix_to_quat(so3.exp([0.0, 0.0, 0.3]))
    assert so3.angle(GroundTruthPose(0.0, np.zeros(3), q).rotation) == pytest.approx(0.3)
