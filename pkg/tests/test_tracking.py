import numpy as np
import pytest
from scipy import ndimage

from easvo.tracking import TrackerConfig, corners_to_array, detect_corners, min_eigenvalue_map, track_lk


def textured(rng, h=120, w=160):
    img = ndimage.gaussian_filter(rng.random((h, w)), 2.0)
    img = (img - img.min()) / np.ptp(img)
    return np.floor(img * 255 + 0.5).astype(np.uint8)


def square_image():
    img = np.zeros((60, 80), dtype=np.uint8)
    img[20:40, 30:50] = 255  # corners at pixel centres 19.5/39.5 by 29.5/49.5 boundaries
    return img


def test_constant_image_has_no_corners():
    assert detect_corners(np.full((30, 30), 77, dtype=np.uint8)) == []


def test_square_corners():
    corners = corners_to_array(detect_corners(square_image(), max_corners=10, quality_level=0.1))
    truth = np.array([[29.5, 19.5], [49.5, 19.5], [29.5, 39.5], [49.5, 39.5]])
    assert len(corners) == 4
    for t in truth:
        assert np.min(np.linalg.norm(corners - t, axis=1)) < 1.0


def test_max_corners_one_is_global_max(rng):
    img = textured(rng)
    (c,) = detect_corners(img, max_corners=1)
    resp = min_eigenvalue_map(img)
    assert c.score == resp.max()
    assert resp[int(round(c.y)), int(round(c.x))] == resp.max()


def test_min_distance_respected(rng):
    pts = corners_to_array(detect_corners(textured(rng), max_corners=500, min_distance=10))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2) + np.eye(len(pts)) * 1e9
    assert d.min() >= 10 - 1.0  # subpixel refinement moves each point by at most half a pixel per axis


def test_min_eigenvalue_against_opencv(rng):
    cv2 = pytest.importorskip("cv2")
    img = textured(rng)
    ours = min_eigenvalue_map(img, 3)
    ref = cv2.cornerMinEigenVal(img, blockSize=3, ksize=3).astype(np.float64)
    inner = (slice(3, -3), slice(3, -3))
    scale = np.median(ours[inner] / np.maximum(ref[inner], 1e-12))
    np.testing.assert_allclose(ours[inner], scale * ref[inner], rtol=1e-3, atol=1e-6 * ours.max())


def test_identical_frames_track_to_themselves(rng):
    img = textured(rng)
    pts = corners_to_array(detect_corners(img, max_corners=100))
    corr = track_lk(img, img, pts)
    assert len(corr) == len(pts)
    assert np.abs(corr.next_points - corr.prev_points).max() < 1e-3


def test_integer_shift_recovered(rng):
    big = textured(rng, 140, 180)
    prev = big[10:130, 10:170]
    nxt = np.roll(big, (-2, 3), axis=(0, 1))[10:130, 10:170]  # content moves by (+3, -2)
    pts = corners_to_array(detect_corners(prev, max_corners=200))
    interior = (pts[:, 0] > 15) & (pts[:, 0] < 145) & (pts[:, 1] > 15) & (pts[:, 1] < 105)
    corr = track_lk(prev, nxt, pts[interior])
    assert len(corr) >= 0.9 * interior.sum()
    flow = corr.next_points - corr.prev_points
    assert np.abs(flow - [3.0, -2.0]).max() < 0.2


def test_textureless_point_dropped(rng):
    img = textured(rng)
    img[40:80, 40:80] = 100
    corr = track_lk(img, img, np.array([[60.0, 60.0], [20.0, 20.0]]))
    assert corr.indices.tolist() == [1]


def test_out_of_image_points_dropped(rng):
    img = textured(rng)
    corr = track_lk(img, img, np.array([[-5.0, 10.0], [500.0, 10.0]]))
    assert len(corr) == 0


def test_tracker_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(window=4)
    with pytest.raises(ValueError):
        TrackerConfig(pyramid_levels=0)
