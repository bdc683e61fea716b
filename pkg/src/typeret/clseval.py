"""Classification support: patch datasets, augmentation and confusion scoring."""
import csv
import hashlib
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from typeret import imgproc
from typeret.errors import EmptyMatrixError, ImageTooSmallForPatchError, ValidationError

PATCH_CSV_HEADER = ["file", "class", "source_image", "x", "y"]
PREDICTION_HEADER = ["image_id", "true_label", "predicted_label"]


@dataclass(frozen=True)
class PatchSpec:
    patches_per_class: int = 5000
    patch_size: int = 300
    crop_size: int = 224
    seed: int = 0
    uniform_over: str = "images"  # or "positions": uniform over all (image, corner) pairs
    mode: str = "RGB"

    def __post_init__(self):
        if self.crop_size > self.patch_size:
            raise ValueError("crop_size must not exceed patch_size")
        if self.uniform_over not in ("images", "positions"):
            raise ValueError("uniform_over must be 'images' or 'positions'")


@dataclass(frozen=True)
class AugmentPolicy:
    rotation: tuple = (-15.0, 15.0)  # open interval, degrees
    shear: tuple = (-3.0, 3.0)
    scale: tuple = (0.9, 1.1)
    jitter: tuple = (0.7, 0.7, 0.3, 0.03)
    jpeg_quality: tuple = (2, 100)  # half-open integer range
    p_otsu: float = 0.05
    p_sauvola: float = 0.025
    sauvola_window: int = 31
    sauvola_k: float = 0.2
    crop_size: int = 224
    fill: int = 255

    def __post_init__(self):
        for p in (self.p_otsu, self.p_sauvola):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.p_otsu + self.p_sauvola > 1:
            raise ValueError("p_otsu + p_sauvola must not exceed 1")

    @classmethod
    def identity(cls, crop_size=224):
        return cls(rotation=(0.0, 0.0), shear=(0.0, 0.0), scale=(1.0, 1.0),
                   jitter=((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0)),
                   jpeg_quality=(100, 100), p_otsu=0.0, p_sauvola=0.0, crop_size=crop_size)


@dataclass
class AugmentParams:
    rotation: float
    shear: float
    scale: float
    jitter: tuple  # (order, brightness, contrast, saturation, hue)
    binarize: str  # "none", "otsu" or "sauvola"
    jpeg_quality: int


def _open_uniform(rng, lo, hi):
    # strictly inside ]lo, hi[; a collapsed range yields its single value
    if lo == hi:
        return float(lo)
    while True:
        v = float(rng.uniform(lo, hi))
        if lo < v < hi:
            return v


def sample_augment_params(rng, policy=AugmentPolicy()):
    rotation = _open_uniform(rng, *policy.rotation)
    shear = _open_uniform(rng, *policy.shear)
    scale = _open_uniform(rng, *policy.scale)
    jitter = imgproc.sample_jitter(rng, *policy.jitter)
    u = float(rng.random())
    if u < policy.p_otsu:
        binarize = "otsu"
    elif u < policy.p_otsu + policy.p_sauvola:
        binarize = "sauvola"
    else:
        binarize = "none"
    qlo, qhi = policy.jpeg_quality
    quality = int(qlo) if qlo >= qhi else int(rng.integers(qlo, qhi))
    return AugmentParams(rotation, shear, scale, jitter, binarize, quality)


def _binarize(img, method, policy):
    gray = imgproc.as_gray(img)
    if method == "otsu":
        ink = imgproc.otsu_threshold(gray)[1]
    else:
        window = min(policy.sauvola_window, max(gray.shape))
        ink = imgproc.sauvola_binarize(gray, window, policy.sauvola_k)
    out = np.where(ink, 0, 255).astype(np.uint8)
    return np.repeat(out[..., None], 3, axis=-1) if np.asarray(img).ndim == 3 else out


def center_crop(img, size):
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {w}x{h} smaller than crop {size}")
    y0, x0 = (h - size) // 2, (w - size) // 2
    return img[y0:y0 + size, x0:x0 + size]


def apply_augment(patch, params, policy=AugmentPolicy()):
    img = np.asarray(patch)
    if params.rotation or params.shear or params.scale != 1.0:
        img = imgproc.affine_transform(img, params.rotation, params.shear, params.scale, policy.fill)
    img = imgproc.apply_jitter(img, *params.jitter)
    if params.binarize != "none":
        img = _binarize(img, params.binarize, policy)
    # quality 100 only arises from a collapsed range and means "no JPEG step"
    if params.jpeg_quality < 100:
        img = imgproc.jpeg_roundtrip(img, params.jpeg_quality)
    return center_crop(img, policy.crop_size).copy()


def augment_patch(patch, policy=AugmentPolicy(), seed=0):
    rng = np.random.default_rng(seed)
    return apply_augment(patch, sample_augment_params(rng, policy), policy)


# -- patch sampling ----------------------------------------------------------

@dataclass
class PatchRecord:
    file: str
    label: str
    source_image: str
    x: int
    y: int


def class_rng(seed, label):
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def _safe_label(label):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def _sample_class(label, entries, spec, out_dir, root, loader):
    rng = class_rng(spec.seed, label)
    images = []
    for e in entries:
        img = loader(e, root)
        h, w = img.shape[:2]
        if h < spec.patch_size or w < spec.patch_size:
            warnings.warn(f"skipping {e.image_id}: {w}x{h} smaller than {spec.patch_size}px patch")
            continue
        images.append((e, img))
    if not images:
        raise ImageTooSmallForPatchError(f"class {label!r}: no training image fits a {spec.patch_size}px patch")
    n_pos = np.array([(img.shape[0] - spec.patch_size + 1) * (img.shape[1] - spec.patch_size + 1)
                      for _, img in images], dtype=np.float64)
    probs = None if spec.uniform_over == "images" else n_pos / n_pos.sum()
    cls_dir = os.path.join(out_dir, "patches", _safe_label(label))
    os.makedirs(cls_dir, exist_ok=True)
    records = []
    for seq in range(spec.patches_per_class):
        k = int(rng.choice(len(images), p=probs))
        entry, img = images[k]
        y = int(rng.integers(0, img.shape[0] - spec.patch_size + 1))
        x = int(rng.integers(0, img.shape[1] - spec.patch_size + 1))
        rel = os.path.join("patches", _safe_label(label), f"{seq:05d}.png")
        imgproc.write_png(os.path.join(out_dir, rel), img[y:y + spec.patch_size, x:x + spec.patch_size])
        records.append(PatchRecord(rel, label, entry.image_id, x, y))
    return records


def _default_loader(spec):
    def load(entry, root):
        path = entry.path if os.path.isabs(entry.path) else os.path.join(root, entry.path)
        return imgproc.read_image(path, spec.mode)
    return load


def sample_patches(manifest, spec, out_dir, root=".", threads=1, loader=None):
    """Write ``spec.patches_per_class`` crops per training class plus ``patches.csv``.

    Each class draws from its own RNG stream keyed on ``(seed, label)``, so the
    output is the same for any thread count.
    """
    loader = loader or _default_loader(spec)
    by_class = {}
    for e in manifest:
        if e.split == "train":
            by_class.setdefault(e.type_label, []).append(e)
    labels = sorted(by_class)

    def job(label):
        return _sample_class(label, by_class[label], spec, out_dir, root, loader)

    os.makedirs(out_dir, exist_ok=True)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(job, labels))
    else:
        chunks = [job(label) for label in labels]
    records = [r for chunk in chunks for r in chunk]
    with open(os.path.join(out_dir, "patches.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(PATCH_CSV_HEADER)
        for r in records:
            wr.writerow([r.file, r.label, r.source_image, r.x, r.y])
    return records


# -- confusion scoring -------------------------------------------------------

class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    def __init__(self, labels, counts):
        counts = np.asarray(counts)
        labels = list(labels)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] != len(labels):
            raise ValueError("confusion matrix must be square and match the labels")
        if (counts < 0).any() or not np.array_equal(counts, np.round(counts)):
            raise ValueError("confusion counts must be non-negative integers")
        self.labels = labels
        self.counts = counts.astype(np.int64)

    @classmethod
    def from_predictions(cls, pairs, labels=None):
        pairs = list(pairs)
        if labels is None:
            labels = sorted({t for t, _ in pairs} | {p for _, p in pairs})
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in pairs:
            counts[index[t], index[p]] += 1
        return cls(labels, counts)

    @property
    def zero_row_classes(self):
        return [lab for lab, s in zip(self.labels, self.counts.sum(axis=1)) if s == 0]


def read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != PREDICTION_HEADER:
            raise ValidationError(f"predictions header must be {','.join(PREDICTION_HEADER)}")
        pairs = []
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 fields")
            pairs.append((row[1], row[2]))
    return pairs


def score_confusion(matrix):
    """``(overall, average)`` accuracy in percent; zero-row classes skip the average."""
    counts = matrix.counts
    total = int(counts.sum())
    if total == 0:
        raise EmptyMatrixError("confusion matrix has no samples")
    # exact rationals: equal accuracies compare equal after rounding to float
    rows = [int(r) for r in counts.sum(axis=1)]
    diag = [int(d) for d in np.diag(counts)]
    overall = Fraction(100 * sum(diag), total)
    recalls = [Fraction(d, r) for d, r in zip(diag, rows) if r > 0]
    average = 100 * sum(recalls) / len(recalls)
    return float(overall), float(average)
