import math

import numpy as np
import pytest

from typeret import features, imgproc, synth
from typeret.errors import ImageTooSmallError
from typeret.features import Keypoint


@pytest.fixture(scope="module")
def glyph_page():
    style = synth.make_type("g", "slanted", 3)
    return synth.render_page(style, np.random.default_rng(1), size=(161, 161))


def rot90_point(x, y, width):
    # np.rot90 (counter-clockwise): source (x, y) lands at (y, width - 1 - x)
    return y, width - 1 - x


def test_constant_image_has_no_keypoints():
    assert features.detect_sift_keypoints(np.full((40, 40), 128, np.uint8)) == []


def test_too_small_image():
    with pytest.raises(ImageTooSmallError):
        features.detect_sift_keypoints(np.zeros((15, 40), np.uint8))


def test_gaussian_blob_keypoint():
    yy, xx = np.mgrid[0:64, 0:64]
    blob = (255 * np.exp(-((xx - 31.3) ** 2 + (yy - 30.6) ** 2) / (2 * 3.0 ** 2))).astype(np.uint8)
    kps = features.detect_sift_keypoints(blob)
    assert kps
    near = [k for k in kps if math.hypot(k.x - 31.3, k.y - 30.6) <= 2]
    assert near
    assert all(1.5 <= k.scale <= 6.0 for k in near)


def test_rotated_copy_keypoint_count(glyph_page):
    a = features.detect_sift_keypoints(glyph_page)
    b = features.detect_sift_keypoints(np.rot90(glyph_page).copy())
    assert abs(len(a) - len(b)) <= 0.1 * len(a)


def test_keypoints_in_bounds_with_valid_orientation(glyph_page):
    h, w = glyph_page.shape
    kps = features.detect_sift_keypoints(glyph_page)
    for k in kps:
        assert 0 <= k.x < w and 0 <= k.y < h
        assert k.scale > 0
        assert 0 <= k.orientation < 2 * math.pi


def test_contour_blank_page():
    assert features.contour_keypoints(np.full((30, 30), 230, np.uint8)) == []


def test_contour_step_edge():
    img = np.zeros((30, 40), np.uint8)
    img[:, 20:] = 255
    kps = features.contour_keypoints(img, stride=1, scales=(2.0,))
    assert len(kps) == 30
    assert len({k.x for k in kps}) == 1
    for k in kps:
        assert min(abs(k.orientation), abs(k.orientation - math.pi), abs(k.orientation - 2 * math.pi)) < 0.1


def test_contour_stride_and_scales(glyph_page):
    one = features.contour_keypoints(glyph_page, stride=1, scales=(2.0,))
    two = features.contour_keypoints(glyph_page, stride=2, scales=(2.0,))
    assert abs(len(two) - len(one) / 2) <= 1
    three_scales = features.contour_keypoints(glyph_page, stride=1, scales=(2.0, 4.0, 8.0))
    assert len(three_scales) == 3 * len(one)


def test_contour_subset_of_canny(glyph_page):
    gx, gy, mag = imgproc.sobel_gradients(glyph_page)
    edges = imgproc.canny(glyph_page, *imgproc.hysteresis_from_magnitudes(mag))
    for k in features.contour_keypoints(glyph_page):
        assert edges[int(k.y), int(k.x)]


def test_descriptor_in_constant_region_is_zero():
    img = np.full((64, 64), 200, np.uint8)
    img[:10, :10] = 0
    ds = features.compute_sift_descriptors(img, [Keypoint(45.0, 45.0, 2.0, 0.0)])
    assert not ds.descriptors.any()


def test_descriptor_normalization_contract():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (80, 90)).astype(np.uint8)
    kps = [Keypoint(float(rng.uniform(0, 89)), float(rng.uniform(0, 79)), float(rng.uniform(1, 8)),
                    float(rng.uniform(0, 2 * math.pi))) for _ in range(200)]
    ds = features.compute_sift_descriptors(img, kps)
    norms = np.linalg.norm(ds.descriptors.astype(np.float64), axis=1)
    assert np.all((norms == 0) | (np.abs(norms - 1) <= 1e-6))
    assert (ds.descriptors >= 0).all()


def test_descriptor_clamp_before_renormalization():
    rng = np.random.default_rng(1)
    raw = rng.random((50, 128)) ** 8
    raw[0] = 0
    out = features.normalize_descriptors(raw)
    first = raw / np.linalg.norm(raw, axis=1, keepdims=True).clip(1e-300)
    clamped = np.minimum(first, 0.2)
    cn = np.linalg.norm(clamped, axis=1)
    # the renormalized vector is the clamped one rescaled: components <= 0.2 / ||clamped||
    assert np.all(out[1:].max(axis=1) <= 0.2 / cn[1:] + 1e-12)
    assert not out[0].any()


def test_descriptor_rotation_invariance(glyph_page):
    w = glyph_page.shape[1]
    rot = np.rot90(glyph_page).copy()
    kps = features.detect_sift_keypoints(glyph_page)[:40]
    moved = []
    for k in kps:
        x, y = rot90_point(k.x, k.y, w)
        moved.append(Keypoint(x, y, k.scale, (k.orientation - math.pi / 2) % (2 * math.pi)))
    a = features.compute_sift_descriptors(glyph_page, kps)
    b = features.compute_sift_descriptors(rot, moved)
    cos = np.sum(a.descriptors * b.descriptors, axis=1)
    assert np.all(cos > 0.9)


def test_extraction_deterministic(glyph_page):
    a = features.extract(glyph_page, "p")
    b = features.extract(glyph_page, "p")
    assert np.array_equal(a.descriptors, b.descriptors)
    assert np.array_equal(a.keypoints, b.keypoints)


def test_extraction_cap(glyph_page):
    cfg = features.ExtractConfig(sampling="contour", max_descriptors=50, seed=3)
    ds = features.extract(glyph_page, "p", cfg)
    assert len(ds) == 50
    again = features.extract(glyph_page, "p", cfg)
    assert np.array_equal(ds.keypoints, again.keypoints)


def test_descriptor_components_bounded(glyph_page):
    ds = features.extract(glyph_page, "p")
    assert ds.descriptors.min() >= 0
    norms = np.linalg.norm(ds.descriptors.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1) <= 1e-6)
