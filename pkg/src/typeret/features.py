"""Local features: SIFT keypoints, contour sampling on Canny edges, SIFT descriptors."""
from dataclasses import dataclass, field
import hashlib
import math
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from typeret import imgproc, kernels
from typeret.errors import ConstantImageError, ImageTooSmallError

DESCRIPTOR_DIM = 128
MIN_IMAGE_SIDE = 16
TWO_PI = 2.0 * math.pi


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float
    orientation: float


@dataclass(frozen=True)
class SiftConfig:
    scales_per_octave: int = 3
    sigma0: float = 1.6
    contrast_threshold: float = 0.04
    edge_ratio: float = 10.0
    assumed_blur: float = 0.5
    border: int = 5
    orientation_bins: int = 36
    peak_ratio: float = 0.8
    max_refine_steps: int = 5


@dataclass(frozen=True)
class ExtractConfig:
    sampling: str = "keypoint"
    sift: SiftConfig = field(default_factory=SiftConfig)
    contour_stride: int = 3
    contour_scales: tuple = (2.0, 4.0, 8.0)
    max_descriptors: int = 20000
    seed: int = 0


@dataclass
class DescriptorSet:
    image_id: str
    keypoints: np.ndarray  # (n, 4) float32: x, y, scale, orientation
    descriptors: np.ndarray  # (n, 128) float32

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float32).reshape(-1, 4)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32).reshape(-1, DESCRIPTOR_DIM)
        if len(self.keypoints) != len(self.descriptors):
            raise ValueError("keypoints and descriptors must have equal length")

    def __len__(self):
        return len(self.descriptors)

    def keypoint_list(self):
        return [Keypoint(*map(float, row)) for row in self.keypoints]


class ScaleSpace:
    """Gaussian and difference-of-Gaussian pyramids of an image scaled to [0, 1]."""

    def __init__(self, img, cfg=SiftConfig()):
        img = imgproc.as_gray(img)
        if min(img.shape) < MIN_IMAGE_SIDE:
            raise ImageTooSmallError(f"image {img.shape[1]}x{img.shape[0]} below {MIN_IMAGE_SIDE}px")
        self.cfg = cfg
        s = cfg.scales_per_octave
        self.n_octaves = max(1, int(math.floor(math.log2(min(img.shape)))) - 3)
        k = 2.0 ** (1.0 / s)
        sig = [cfg.sigma0 * k ** i for i in range(s + 3)]
        incr = [math.sqrt(sig[i] ** 2 - sig[i - 1] ** 2) for i in range(1, s + 3)]
        base = img.astype(np.float64) / 255.0
        first = math.sqrt(max(cfg.sigma0 ** 2 - cfg.assumed_blur ** 2, 0.01))
        cur = ndimage.gaussian_filter(base, first, mode="nearest")
        self.gauss, self.dog = [], []
        for o in range(self.n_octaves):
            if o > 0:
                cur = self.gauss[o - 1][s][::2, ::2]
            layers = [cur]
            for sg in incr:
                layers.append(ndimage.gaussian_filter(layers[-1], sg, mode="nearest"))
            self.gauss.append(layers)
            self.dog.append(np.stack([b - a for a, b in zip(layers[:-1], layers[1:])]))

    def level_for_scale(self, sigma):
        """Octave and layer whose blur best matches a keypoint scale in image pixels."""
        s = self.cfg.scales_per_octave
        level = s * math.log2(max(sigma, 1e-6) / self.cfg.sigma0)
        o = min(max(int(math.floor(level / s)), 0), self.n_octaves - 1)
        layer = min(max(int(round(level - o * s)), 0), s + 2)
        return o, layer


def _refine(dog, layer, r, c, cfg):
    """Quadratic sub-pixel/sub-scale refinement; returns None on rejection."""
    s = cfg.scales_per_octave
    n_layers, rows, cols = dog.shape
    b = cfg.border
    for _ in range(cfg.max_refine_steps):
        D = dog
        v = D[layer, r, c]
        dx = (D[layer, r, c + 1] - D[layer, r, c - 1]) * 0.5
        dy = (D[layer, r + 1, c] - D[layer, r - 1, c]) * 0.5
        ds = (D[layer + 1, r, c] - D[layer - 1, r, c]) * 0.5
        dxx = D[layer, r, c + 1] + D[layer, r, c - 1] - 2 * v
        dyy = D[layer, r + 1, c] + D[layer, r - 1, c] - 2 * v
        dss = D[layer + 1, r, c] + D[layer - 1, r, c] - 2 * v
        dxy = (D[layer, r + 1, c + 1] - D[layer, r + 1, c - 1]
               - D[layer, r - 1, c + 1] + D[layer, r - 1, c - 1]) * 0.25
        dxs = (D[layer + 1, r, c + 1] - D[layer + 1, r, c - 1]
               - D[layer - 1, r, c + 1] + D[layer - 1, r, c - 1]) * 0.25
        dys = (D[layer + 1, r + 1, c] - D[layer + 1, r - 1, c]
               - D[layer - 1, r + 1, c] + D[layer - 1, r - 1, c]) * 0.25
        H = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        g = np.array([dx, dy, ds])
        try:
            off = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(off) < 0.5):
            break
        if np.any(np.abs(off) > 1e6):
            return None
        c += int(round(off[0]))
        r += int(round(off[1]))
        layer += int(round(off[2]))
        if layer < 1 or layer > s or r < b or r >= rows - b or c < b or c >= cols - b:
            return None
    else:
        return None
    contrast = v + 0.5 * float(g @ off)
    if abs(contrast) * s < cfg.contrast_threshold:
        return None
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    er = cfg.edge_ratio
    if det <= 0 or tr * tr * er >= (er + 1) ** 2 * det:
        return None
    return layer, r, c, off


def _dominant_orientations(hist, peak_ratio):
    n = len(hist)
    sm = np.zeros(n)
    for shift, w in ((-2, 1), (-1, 4), (0, 6), (1, 4), (2, 1)):
        sm += w * np.roll(hist, -shift)
    sm /= 16.0
    top = sm.max()
    if top <= 0:
        return []
    out = []
    for k in range(n):
        left, mid, right = sm[(k - 1) % n], sm[k], sm[(k + 1) % n]
        if mid > left and mid > right and mid >= peak_ratio * top:
            denom = left - 2 * mid + right
            b = k + (0.5 * (left - right) / denom if denom != 0 else 0.0)
            ang = (b % n) * TWO_PI / n
            if ang >= TWO_PI:
                ang -= TWO_PI
            out.append(ang)
    return out


def detect_sift_keypoints(img, cfg=SiftConfig(), space=None):
    """DoG extrema with sub-pixel refinement, one keypoint per dominant orientation."""
    if space is None:
        space = ScaleSpace(img, cfg)
    s = cfg.scales_per_octave
    pre = 0.5 * cfg.contrast_threshold / s
    found = []
    for o in range(space.n_octaves):
        dog = space.dog[o]
        _, rows, cols = dog.shape
        b = cfg.border
        if rows <= 2 * b or cols <= 2 * b:
            continue
        mx = ndimage.maximum_filter(dog, size=3, mode="nearest")
        mn = ndimage.minimum_filter(dog, size=3, mode="nearest")
        cand = ((dog == mx) & (dog > pre)) | ((dog == mn) & (dog < -pre))
        cand[0] = cand[-1] = False
        cand[:, :b] = cand[:, rows - b:] = False
        cand[:, :, :b] = cand[:, :, cols - b:] = False
        seen = set()
        for layer, r, c in zip(*np.nonzero(cand)):
            res = _refine(dog, int(layer), int(r), int(c), cfg)
            if res is None:
                continue
            layer2, r2, c2, off = res
            key = (layer2, r2, c2)
            if key in seen:
                continue
            seen.add(key)
            sigma_oct = cfg.sigma0 * 2.0 ** ((layer2 + off[2]) / s)
            x_oct, y_oct = c2 + off[0], r2 + off[1]
            found.append((o, layer2, x_oct, y_oct, sigma_oct))
    if not found:
        return []
    kps = []
    for o in range(space.n_octaves):
        sel = [f for f in found if f[0] == o]
        for layer in range(s + 3):
            group = [f for f in sel if f[1] == layer]
            if not group:
                continue
            g_img = space.gauss[o][layer]
            xs = np.array([int(math.floor(f[2] + 0.5)) for f in group])
            ys = np.array([int(math.floor(f[3] + 0.5)) for f in group])
            sig = np.array([f[4] for f in group])
            hists = kernels.orientation_histograms(g_img, xs, ys, sig, cfg.orientation_bins)
            scale = 2.0 ** o
            for f, h in zip(group, hists):
                for ang in _dominant_orientations(h, cfg.peak_ratio):
                    kps.append(Keypoint(float(f[2] * scale), float(f[3] * scale), float(f[4] * scale), float(ang)))
    kps.sort(key=lambda k: (k.y, k.x, k.scale, k.orientation))
    return kps


def contour_keypoints(img, stride=3, scales=(2.0, 4.0, 8.0), sigma=imgproc.CANNY_SIGMA):
    """Keypoints on every ``stride``-th Canny edge pixel (row-major), one per scale,
    oriented along the local gradient."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if not scales:
        raise ValueError("at least one scale is required")
    img = imgproc.as_gray(img)
    gx, gy, mag = imgproc.sobel_gradients(img, sigma)
    try:
        low, high = imgproc.hysteresis_from_magnitudes(mag)
    except ConstantImageError:
        return []
    edges = imgproc.canny_from_gradients(gx, gy, mag, low, high)
    ys, xs = np.nonzero(edges)
    ys, xs = ys[::stride], xs[::stride]
    ori = np.mod(np.arctan2(gy[ys, xs], gx[ys, xs]), TWO_PI)
    ori[ori >= TWO_PI] = 0.0
    return [Keypoint(float(x), float(y), float(sc), float(a))
            for x, y, a in zip(xs, ys, ori) for sc in scales]


def normalize_descriptors(raw, clamp=0.2):
    """l2-normalize, clamp components at ``clamp``, l2-normalize again; zero rows stay zero."""
    raw = np.asarray(raw, dtype=np.float64)
    norm = np.linalg.norm(raw, axis=1, keepdims=True)
    out = np.divide(raw, norm, out=np.zeros_like(raw), where=norm > 0)
    out = np.minimum(out, clamp)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, norm, out=np.zeros_like(out), where=norm > 0)


def compute_sift_descriptors(img, kps, image_id="", cfg=SiftConfig(), space=None):
    if space is None:
        space = ScaleSpace(img, cfg)
    kps = list(kps)
    n = len(kps)
    raw = np.zeros((n, DESCRIPTOR_DIM))
    groups = {}
    for idx, kp in enumerate(kps):
        groups.setdefault(space.level_for_scale(kp.scale), []).append(idx)
    for (o, layer), idxs in sorted(groups.items()):
        g_img = space.gauss[o][layer]
        rows, cols = g_img.shape
        f = 2.0 ** o
        xs = np.array([min(max(int(math.floor(kps[i].x / f + 0.5)), 0), cols - 1) for i in idxs])
        ys = np.array([min(max(int(math.floor(kps[i].y / f + 0.5)), 0), rows - 1) for i in idxs])
        sig = np.array([kps[i].scale / f for i in idxs])
        ang = np.array([kps[i].orientation for i in idxs])
        raw[idxs] = kernels.sift_descriptors(g_img, xs, ys, sig, ang)
    pts = np.array([tuple(k) for k in kps], dtype=np.float64).reshape(-1, 4)
    return DescriptorSet(image_id, pts, normalize_descriptors(raw))


def _subsample_seed(seed, image_id):
    digest = hashlib.sha256(f"{seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def extract(img, image_id, cfg=ExtractConfig()):
    """Sample keypoints (``keypoint`` or ``contour`` mode), cap their number and describe them."""
    img = imgproc.as_gray(img)
    space = ScaleSpace(img, cfg.sift)
    if cfg.sampling == "keypoint":
        kps = detect_sift_keypoints(img, cfg.sift, space)
    elif cfg.sampling == "contour":
        kps = contour_keypoints(img, cfg.contour_stride, cfg.contour_scales)
    else:
        raise ValueError(f"unknown sampling mode {cfg.sampling!r}")
    if cfg.max_descriptors and len(kps) > cfg.max_descriptors:
        rng = np.random.default_rng(_subsample_seed(cfg.seed, image_id))
        keep = np.sort(rng.choice(len(kps), cfg.max_descriptors, replace=False))
        kps = [kps[i] for i in keep]
    return compute_sift_descriptors(img, kps, image_id, cfg.sift, space)
