"""Pixel-level primitives.

Images are plain numpy arrays: grayscale ``uint8`` of shape (H, W), RGB
``uint8`` of shape (H, W, 3) and binary masks ``bool`` of shape (H, W).
Binary masks mark the foreground (ink) as True.
"""
import io
import math

import numpy as np
from PIL import Image
from scipy import ndimage

from typeret import kernels
from typeret.errors import ConstantImageError, WindowTooLargeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
CANNY_SIGMA = 1.4
HYSTERESIS_RATIO = 0.4


def as_gray(img):
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D grayscale image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise ValueError("grayscale intensities must lie in [0, 255]")
        img = img.astype(np.uint8)
    return img


def read_image(path, mode="L"):
    """Load a PNG/JPEG file as an ``L`` (gray) or ``RGB`` array."""
    with Image.open(path) as im:
        return np.asarray(im.convert(mode)).copy()


def write_png(path, img):
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PNG")


def to_grayscale(img):
    img = np.asarray(img)
    if img.ndim == 2:
        return as_gray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {img.shape}")
    r, g, b = (img[..., i].astype(np.float64) for i in range(3))
    y = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def otsu_from_histogram(hist):
    """Smallest threshold index maximizing the between-class variance.

    Class 0 holds bins ``<= t``. Comparisons are carried out on exact integer
    ratios, so ties resolve deterministically. Returns None when fewer than two
    bins are occupied.
    """
    counts = [int(c) for c in hist]
    total = sum(counts)
    total_sum = sum(i * c for i, c in enumerate(counts))
    best_t, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for t in range(len(counts) - 1):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (total_sum * n0 - total * s0) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_threshold(img):
    """Global Otsu threshold and the ink mask.

    The foreground is whichever side of the threshold holds fewer pixels (the
    darker side on ties). A constant image returns its value and an empty mask.
    """
    img = as_gray(img)
    hist = np.bincount(img.ravel(), minlength=256)
    t = otsu_from_histogram(hist)
    if t is None:
        return int(img.flat[0]), np.zeros(img.shape, dtype=bool)
    dark = img <= t
    n_dark = int(dark.sum())
    if n_dark <= img.size - n_dark:
        return t, dark
    return t, ~dark


def _check_window(window, shape):
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    if window > shape[0] and window > shape[1]:
        raise WindowTooLargeError(f"window {window} exceeds image size {shape[1]}x{shape[0]}")


def local_sums(img, window):
    """Exact integer window sums of pixels and squared pixels (edge-replicated)."""
    half = window // 2
    pad = np.pad(img.astype(np.int64), half, mode="edge")

    def box(a):
        ii = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.int64)
        ii[1:, 1:] = a.cumsum(0).cumsum(1)
        h, w = img.shape
        return (ii[window:window + h, window:window + w] - ii[:h, window:window + w]
                - ii[window:window + h, :w] + ii[:h, :w])

    return box(pad), box(pad * pad)


def sauvola_binarize(img, window=15, k=0.2, r=128.0):
    img = as_gray(img)
    _check_window(window, img.shape)
    if not 0 <= k < 1:
        raise ValueError("k must lie in [0, 1)")
    if r <= 0:
        raise ValueError("r must be positive")
    s1, s2 = local_sums(img, window)
    n = window * window
    mean = s1 / n
    var = np.maximum(n * s2 - s1 * s1, 0) / (n * n)
    std = np.sqrt(var)
    thresh = mean * (1.0 + k * (std / r - 1.0))
    return img < thresh


def sobel_gradients(img, sigma=CANNY_SIGMA):
    """Gaussian-smoothed Sobel gradients ``(gx, gy, magnitude)``, y pointing down."""
    f = np.asarray(img, dtype=np.float64)
    if sigma > 0:
        f = ndimage.gaussian_filter(f, sigma, mode="nearest")
    gx = ndimage.sobel(f, axis=1, mode="nearest")
    gy = ndimage.sobel(f, axis=0, mode="nearest")
    return gx, gy, np.hypot(gx, gy)


def hysteresis_from_magnitudes(mag, ratio=HYSTERESIS_RATIO):
    """Otsu on a 256-bin magnitude histogram gives ``high``; ``low = ratio * high``."""
    mag = np.asarray(mag, dtype=np.float64)
    top = float(mag.max()) if mag.size else 0.0
    if top <= 0:
        raise ConstantImageError("image has no gradient")
    bins = np.minimum((mag / top * 256).astype(np.int64), 255)
    t = otsu_from_histogram(np.bincount(bins.ravel(), minlength=256))
    high = top if t is None else (t + 1) * top / 256.0
    return ratio * high, high


def auto_hysteresis(img, sigma=CANNY_SIGMA):
    img = as_gray(img)
    if img.min() == img.max():
        raise ConstantImageError("constant image")
    _, _, mag = sobel_gradients(img, sigma)
    return hysteresis_from_magnitudes(mag)


def canny_from_gradients(gx, gy, mag, low, high):
    if not 0 <= low <= high:
        raise ValueError("need 0 <= low <= high")
    thin = kernels.nonmax_suppress(mag, gx, gy)
    return kernels.hysteresis(mag, thin, float(low), float(high))


def canny(img, low, high, sigma=CANNY_SIGMA):
    gx, gy, mag = sobel_gradients(as_gray(img), sigma)
    return canny_from_gradients(gx, gy, mag, low, high)


def jpeg_roundtrip(img, quality):
    if not 1 <= quality <= 100:
        raise ValueError("quality must lie in [1, 100]")
    img = np.asarray(img, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        out = np.asarray(im.convert("L" if img.ndim == 2 else "RGB")).copy()
    return out


def _snap(v, tol=1e-9):
    near = np.rint(v)
    return np.where(np.abs(v - near) < tol, near, v)


def affine_transform(img, rotation=0.0, shear=0.0, scale=1.0, fill=255):
    """Rotate (degrees, counter-clockwise on screen), x-shear (degrees) and scale
    about the image centre with bilinear resampling. Samples falling outside the
    source take ``fill``; the canvas size is unchanged.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    img = np.asarray(img)
    h, w = img.shape[:2]
    th = math.radians(rotation)
    rot = np.array([[math.cos(th), math.sin(th)], [-math.sin(th), math.cos(th)]])
    sh = np.array([[1.0, math.tan(math.radians(shear))], [0.0, 1.0]])
    inv = np.linalg.inv(rot @ sh * scale)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    sx = _snap(inv[0, 0] * dx + inv[0, 1] * dy + cx)
    sy = _snap(inv[1, 0] * dx + inv[1, 1] * dy + cy)
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.where(inside, sx, 0.0)
    sy = np.where(inside, sy, 0.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    src = img.astype(np.float64)
    if img.ndim == 3:
        fx, fy, inside = fx[..., None], fy[..., None], inside[..., None]
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    val = top * (1 - fy) + bot * fy
    val = np.where(inside, val, float(fill))
    return np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8)


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(-1)
    minc = rgb.min(-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], -1)


def _hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros(hsv.shape)
    for k, (rr, gg, bb) in enumerate(choices):
        m = i == k
        out[..., 0][m], out[..., 1][m], out[..., 2][m] = rr[m], gg[m], bb[m]
    return out


def _jitter_range(value, center, bound=None):
    if isinstance(value, (tuple, list)):
        lo, hi = float(value[0]), float(value[1])
    else:
        if value < 0:
            raise ValueError("jitter factors must be non-negative")
        lo, hi = center - value, center + value
        if bound is not None:
            lo = max(lo, bound)
    return lo, hi


def sample_jitter(rng, brightness=0.7, contrast=0.7, saturation=0.3, hue=0.03):
    """Draw ``(order, b, c, s, h)``; ranges collapsed to a point give that point."""
    if not isinstance(hue, (tuple, list)) and hue > 0.5:
        raise ValueError("hue must be <= 0.5")
    order = rng.permutation(4)
    ranges = (
        _jitter_range(brightness, 1.0, 0.0),
        _jitter_range(contrast, 1.0, 0.0),
        _jitter_range(saturation, 1.0, 0.0),
        _jitter_range(hue, 0.0),
    )
    factors = [lo if lo == hi else float(rng.uniform(lo, hi)) for lo, hi in ranges]
    return (order, *factors)


def apply_jitter(img, order, b, c, s, h):
    img = np.asarray(img)
    gray_input = img.ndim == 2
    x = img.astype(np.float64)
    if gray_input:
        x = np.repeat(x[..., None], 3, axis=-1)
    w = np.asarray(LUMA_WEIGHTS)
    for op in order:
        if op == 0 and b != 1.0:
            x = np.clip(x * b, 0, 255)
        elif op == 1 and c != 1.0:
            mean = float((x @ w).mean())
            x = np.clip(c * x + (1 - c) * mean, 0, 255)
        elif op == 2 and s != 1.0:
            gray = (x @ w)[..., None]
            x = np.clip(s * x + (1 - s) * gray, 0, 255)
        elif op == 3 and h != 0.0:
            hsv = _rgb_to_hsv(x / 255.0)
            hsv[..., 0] = (hsv[..., 0] + h) % 1.0
            x = np.clip(_hsv_to_rgb(hsv) * 255.0, 0, 255)
    out = np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)
    if gray_input:
        return to_grayscale(out)
    return out


def color_jitter(img, brightness=0.7, contrast=0.7, saturation=0.3, hue=0.03, seed=None, rng=None):
    """Random brightness/contrast/saturation/hue perturbation in random order.

    Each factor is either a spread around the identity (``b`` drawn from
    ``[max(0, 1 - brightness), 1 + brightness]``, hue shift from
    ``[-hue, hue]`` turns) or an explicit ``(lo, hi)`` range.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    params = sample_jitter(rng, brightness, contrast, saturation, hue)
    return apply_jitter(img, *params)
