import os
import zlib
from collections import Counter

import numpy as np
import pytest

from typeret import clseval as ce
from typeret import imgproc
from typeret.errors import EmptyMatrixError, ImageTooSmallForPatchError
from typeret.retrieval import ManifestEntry

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def table1():
    return ce.ConfusionMatrix.from_predictions(ce.read_predictions(os.path.join(FIXTURES, "table1.csv")))


def test_table1_scores():
    m = table1()
    assert m.counts.sum() == 2600
    overall, average = ce.score_confusion(m)
    assert round(overall, 1) == 51.4 and round(average, 1) == 73.9
    assert overall == pytest.approx(100 * 1337 / 2600)


def test_identity_and_hand_example():
    assert ce.score_confusion(ce.ConfusionMatrix("abc", np.diag([3, 1, 7]))) == (100.0, 100.0)
    assert ce.score_confusion(ce.ConfusionMatrix("ab", [[1, 1], [0, 2]])) == (75.0, 75.0)


def test_zero_row_excluded_and_empty():
    m = ce.ConfusionMatrix("ab", [[2, 0], [0, 0]])
    assert ce.score_confusion(m) == (100.0, 100.0)
    assert m.zero_row_classes == ["b"]
    with pytest.raises(EmptyMatrixError):
        ce.score_confusion(ce.ConfusionMatrix("ab", np.zeros((2, 2), int)))
    with pytest.raises(ValueError):
        ce.ConfusionMatrix("ab", [[1, -1], [0, 1]])


def test_relabel_and_balanced_invariants():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(2, 7))
        counts = rng.integers(0, 20, (k, k))
        perm = rng.permutation(k)
        a = ce.score_confusion(ce.ConfusionMatrix(range(k), counts))
        b = ce.score_confusion(ce.ConfusionMatrix(range(k), counts[perm][:, perm]))
        assert a[0] == b[0]
        row = int(rng.integers(1, 30))
        bal = np.zeros((k, k), int)
        for i in range(k):
            bal[i] = rng.multinomial(row, np.ones(k) / k)
        overall, average = ce.score_confusion(ce.ConfusionMatrix(range(k), bal))
        assert overall == average


def test_sampled_ranges_and_rates():
    rng = np.random.default_rng(1)
    pol = ce.AugmentPolicy()
    draws = [ce.sample_augment_params(rng, pol) for _ in range(10000)]
    assert all(-15 < d.rotation < 15 and -3 < d.shear < 3 and 0.9 < d.scale < 1.1 for d in draws)
    assert all(2 <= d.jpeg_quality < 100 for d in draws)
    rates = Counter(d.binarize for d in draws)
    assert abs(rates["otsu"] / 10000 - 0.05) <= 0.006
    assert abs(rates["sauvola"] / 10000 - 0.025) <= 0.0045


def test_identity_policy_gives_center_crop():
    img = np.random.default_rng(2).integers(0, 256, (300, 300, 3)).astype(np.uint8)
    out = ce.augment_patch(img, ce.AugmentPolicy.identity(), seed=5)
    assert np.array_equal(out, img[38:262, 38:262])
    gray = img[..., 0]
    assert np.array_equal(ce.augment_patch(gray, ce.AugmentPolicy.identity(), seed=5), gray[38:262, 38:262])


def test_augment_deterministic_and_shape():
    img = np.random.default_rng(3).integers(0, 256, (300, 300, 3)).astype(np.uint8)
    a = ce.augment_patch(img, seed=11)
    assert a.shape == (224, 224, 3) and a.dtype == np.uint8
    assert np.array_equal(a, ce.augment_patch(img, seed=11))


@pytest.mark.parametrize("method", ["otsu", "sauvola"])
def test_binarization_branch(method):
    img = np.full((300, 300), 220, np.uint8)
    img[100:200, 140:160] = 20
    params = ce.AugmentParams(0.0, 0.0, 1.0, (np.arange(4), 1.0, 1.0, 1.0, 0.0), method, 100)
    out = ce.apply_augment(img, params)
    assert set(np.unique(out)) <= {0, 255}
    assert out[112, 112] == 0 and out[10, 10] == 255


def manifest_for(images):
    rows, arrays = [], {}
    for label, shapes in images.items():
        for i, shape in enumerate(shapes):
            iid = f"{label}-{i}"
            arrays[iid] = np.random.default_rng(zlib.crc32(iid.encode())).integers(0, 256, shape).astype(np.uint8)
            rows.append(ManifestEntry(iid, f"{label}-doc", label, "train", iid + ".png"))
    return rows, (lambda e, root: arrays[e.image_id]), arrays


def test_single_position_class(tmp_path):
    m, loader, arrays = manifest_for({"A": [(300, 300)]})
    spec = ce.PatchSpec(patches_per_class=500, mode="L")
    recs = ce.sample_patches(m, spec, tmp_path, loader=loader)
    assert len(recs) == 500 and {(r.x, r.y) for r in recs} == {(0, 0)}
    first = imgproc.read_image(tmp_path / recs[0].file)
    assert np.array_equal(first, arrays["A-0"])


def test_two_positions_both_occur(tmp_path):
    m, loader, _ = manifest_for({"A": [(300, 301)]})
    recs = ce.sample_patches(m, ce.PatchSpec(patches_per_class=400, mode="L"), tmp_path, loader=loader)
    counts = Counter(r.x for r in recs)
    assert set(counts) == {0, 1}
    chi2 = sum((c - 200) ** 2 / 200 for c in counts.values())
    assert chi2 < 10.83  # p = 0.001, one degree of freedom


def test_counts_layout_and_verbatim(tmp_path):
    m, loader, arrays = manifest_for({f"T{i}": [(310, 320), (305, 300)] for i in range(8)})
    recs = ce.sample_patches(m, ce.PatchSpec(patches_per_class=10, mode="L", seed=4), tmp_path, loader=loader)
    assert len(recs) == 80
    dirs = os.listdir(tmp_path / "patches")
    assert len(dirs) == 8 and all(len(os.listdir(tmp_path / "patches" / d)) == 10 for d in dirs)
    for r in recs[::7]:
        src = arrays[r.source_image]
        got = imgproc.read_image(tmp_path / r.file)
        assert np.array_equal(got, src[r.y:r.y + 300, r.x:r.x + 300])
    lines = (tmp_path / "patches.csv").read_text().splitlines()
    assert lines[0] == "file,class,source_image,x,y" and len(lines) == 81


def test_threads_do_not_change_output(tmp_path):
    m, loader, _ = manifest_for({f"T{i}": [(302, 303)] for i in range(4)})
    spec = ce.PatchSpec(patches_per_class=6, mode="L")
    a = ce.sample_patches(m, spec, tmp_path / "a", loader=loader, threads=1)
    b = ce.sample_patches(m, spec, tmp_path / "b", loader=loader, threads=4)
    assert a == b


def test_too_small(tmp_path):
    m, loader, _ = manifest_for({"A": [(100, 400)], "B": [(300, 300)]})
    with pytest.warns(UserWarning):
        with pytest.raises(ImageTooSmallForPatchError):
            ce.sample_patches(m, ce.PatchSpec(patches_per_class=2, mode="L"), tmp_path, loader=loader)
