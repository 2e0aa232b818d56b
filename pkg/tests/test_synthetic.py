import numpy as np
import pytest

from easvo import so3
from easvo.dataset_io import load_dataset
from easvo.synthetic import (
    SyntheticScene,
    darken,
    export_dataset,
    generate_events,
    make_panorama,
    render_frames,
    standard_motion,
)


@pytest.fixture(scope="module")
def pano():
    return make_panorama(seed=3, width=1024, height=512)


def test_panorama_is_seeded(pano):
    np.testing.assert_array_equal(make_panorama(seed=3, width=1024, height=512), pano)
    assert pano.min() > 0 and pano.max() <= 1
    lit = make_panorama(seed=3, width=1024, height=512, lighting="spots")
    assert lit.mean() < pano.mean()
    with pytest.raises(ValueError):
        make_panorama(lighting="flood")


def test_static_scene(pano):
    scene = SyntheticScene(pano, motion=[(0.0, (0.0, 0.0, 0.0))], duration=0.5)
    frames, _ = render_frames(scene)
    for f in frames[1:]:
        np.testing.assert_array_equal(f.pixels, frames[0].pixels)
    assert len(generate_events(scene)) == 0


def test_constant_rate_integration():
    scene = SyntheticScene(np.ones((8, 16)), motion=[(0.0, (0.0, 0.0, 0.5))], duration=1.0)
    R = scene.orientation(1.0)
    assert so3.angle(R) == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(so3.log(R), [0, 0, 0.5], atol=1e-12)


def test_split_integration_composes():
    w1, w2 = (0.1, -0.3, 0.2), (0.4, 0.0, -0.1)
    one = SyntheticScene(np.ones((8, 16)), motion=[(0.0, w1), (0.7, w2)], duration=1.5)
    first = SyntheticScene(np.ones((8, 16)), motion=[(0.0, w1)], duration=0.7)
    second = SyntheticScene(np.ones((8, 16)), motion=[(0.0, w2)], duration=0.8)
    for s in (0.0, 0.3, 0.8):
        expected = first.orientation(0.7) @ second.orientation(s)
        assert so3.geodesic(one.orientation(0.7 + s), expected) < 1e-12


def test_standard_motion_bound():
    for _, w in standard_motion(10.0):
        assert np.linalg.norm(w) <= 0.8 + 1e-12


def test_doubling_contrast_threshold(pano):
    motion = [(0.0, (0.05, 0.3, 0.0))]
    small = SyntheticScene(pano, motion=motion, duration=0.2, contrast_threshold=0.15)
    big = SyntheticScene(pano, motion=motion, duration=0.2, contrast_threshold=0.30)
    n_small, n_big = len(generate_events(small)), len(generate_events(big))
    assert 0 < n_big <= n_small


def test_events_follow_moving_edge():
    h, w = 256, 2048
    edge = np.where(np.arange(w)[None, :] < w // 2, 0.1, 0.9) * np.ones((h, 1))
    omega = 0.3
    scene = SyntheticScene(edge, motion=[(0.0, (0.0, omega, 0.0))], duration=0.5)
    ev = generate_events(scene)
    assert len(ev) > 1000
    assert np.all(np.diff(ev.t) >= 0)
    K = scene.intrinsics
    # the edge sits at world longitude 0, seen at camera longitude -omega * t
    u_edge = K.cx + K.fx * np.tan(-omega * ev.t)
    near = np.abs(ev.x - u_edge) <= 2.0
    assert near.mean() >= 0.9


def test_noise_events_are_seeded(pano):
    scene = SyntheticScene(pano, motion=[(0.0, (0.0, 0.0, 0.0))], duration=0.2, noise_rate=2.0, seed=9)
    a, b = generate_events(scene), generate_events(scene)
    assert len(a) > 0
    np.testing.assert_array_equal(a.t, b.t)
    np.testing.assert_array_equal(a.x, b.x)


def test_darken_range():
    from easvo.dataset_io import IntensityFrame

    f = IntensityFrame(0.0, np.array([[0, 128, 255]], dtype=np.uint8))
    assert darken([f], 60)[0].pixels.tolist() == [[0, 30, 60]]
    noisy = darken([f], 60, read_noise=2.0, seed=1)[0].pixels
    assert noisy.dtype == np.uint8


def test_export_round_trip_and_determinism(tmp_path, pano):
    scene = SyntheticScene(pano, motion=standard_motion(0.5), duration=0.5, seed=2)
    frames, poses = render_frames(scene)
    events = generate_events(scene)
    export_dataset(scene, tmp_path / "a", frames, poses, events)
    export_dataset(scene, tmp_path / "b")
    for name in ("events.txt", "groundtruth.txt", "images.txt", "intrinsics.json", "images/frame_00000005.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ds = load_dataset(tmp_path / "a")
    assert len(ds.frames) == len(frames)
    np.testing.assert_array_equal(ds.frames[3].pixels, frames[3].pixels)
    np.testing.assert_allclose(ds.events.t, events.t, atol=5e-10)
    np.testing.assert_array_equal(ds.events.x, events.x)
    assert ds.intrinsics == scene.intrinsics
    for p, q in zip(ds.ground_truth, poses):
        assert so3.geodesic(p.rotation, q.rotation) < 1e-8
