"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and semantics; ``typeret.kernels`` picks one at import time.
"""
import math

import numpy as np
from scipy import ndimage

DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE_FACTOR = 3.0
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0 * ORI_SIGMA_FACTOR


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def orientation_histograms(img, xs, ys, sigmas, nbins=36):
    """Raw (unsmoothed) gradient orientation histograms around integer positions."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    rows, cols = img.shape
    n = len(xs)
    out = np.zeros((n, nbins))
    for k in range(n):
        x, y, sigma = int(xs[k]), int(ys[k]), float(sigmas[k])
        radius = _round_half_up(ORI_RADIUS_FACTOR * sigma)
        expf = -1.0 / (2.0 * (ORI_SIGMA_FACTOR * sigma) ** 2)
        r0, r1 = max(y - radius, 1), min(y + radius, rows - 2)
        c0, c1 = max(x - radius, 1), min(x + radius, cols - 2)
        if r0 > r1 or c0 > c1:
            continue
        r = np.arange(r0, r1 + 1)[:, None]
        c = np.arange(c0, c1 + 1)[None, :]
        dx = img[r, c + 1] - img[r, c - 1]
        dy = img[r + 1, c] - img[r - 1, c]
        w = np.exp(((r - y) ** 2 + (c - x) ** 2) * expf)
        mag = np.sqrt(dx * dx + dy * dy)
        ang = np.arctan2(dy, dx)
        b = np.rint(ang * (nbins / (2.0 * math.pi))).astype(np.int64) % nbins
        out[k] = np.bincount(b.ravel(), weights=(w * mag).ravel(), minlength=nbins)
    return out


def sift_descriptors(img, xs, ys, sigmas, angles):
    """Raw 4x4x8 gradient histograms with trilinear binning (no normalization).

    ``xs``/``ys`` are integer sample centres in ``img`` coordinates, ``sigmas``
    the keypoint scale in the same pixel units, ``angles`` the keypoint
    orientation in radians (y axis pointing down).
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    rows, cols = img.shape
    d, nb = DESC_WIDTH, DESC_BINS
    n = len(xs)
    out = np.zeros((n, d * d * nb))
    max_radius = int(math.sqrt(rows * rows + cols * cols))
    bins_per_rad = nb / (2.0 * math.pi)
    exp_scale = -1.0 / (d * d * 0.5)
    for k in range(n):
        x, y = int(xs[k]), int(ys[k])
        hist_width = DESC_SCALE_FACTOR * float(sigmas[k])
        radius = min(_round_half_up(hist_width * math.sqrt(2.0) * (d + 1) * 0.5), max_radius)
        cos_t = math.cos(angles[k]) / hist_width
        sin_t = math.sin(angles[k]) / hist_width
        off = np.arange(-radius, radius + 1)
        i = off[:, None].astype(np.float64)
        j = off[None, :].astype(np.float64)
        c_rot = j * cos_t + i * sin_t
        r_rot = -j * sin_t + i * cos_t
        rbin = r_rot + d / 2 - 0.5
        cbin = c_rot + d / 2 - 0.5
        r = y + off[:, None]
        c = x + off[None, :]
        ok = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
        ok &= (r > 0) & (r < rows - 1) & (c > 0) & (c < cols - 1)
        if not ok.any():
            continue
        rr = np.broadcast_to(r, ok.shape)[ok]
        cc = np.broadcast_to(c, ok.shape)[ok]
        rb, cb = rbin[ok], cbin[ok]
        dx = img[rr, cc + 1] - img[rr, cc - 1]
        dy = img[rr + 1, cc] - img[rr - 1, cc]
        w = np.exp((c_rot[ok] ** 2 + r_rot[ok] ** 2) * exp_scale)
        val = np.sqrt(dx * dx + dy * dy) * w
        ob = (np.arctan2(dy, dx) - angles[k]) * bins_per_rad
        r0 = np.floor(rb)
        c0 = np.floor(cb)
        o0 = np.floor(ob)
        fr, fc, fo = rb - r0, cb - c0, ob - o0
        r0 = r0.astype(np.int64)
        c0 = c0.astype(np.int64)
        o0 = o0.astype(np.int64) % nb
        hist = np.zeros((d + 2) * (d + 2) * nb)
        for dr, wr in ((0, 1 - fr), (1, fr)):
            for dc, wc in ((0, 1 - fc), (1, fc)):
                for do, wo in ((0, 1 - fo), (1, fo)):
                    idx = ((r0 + 1 + dr) * (d + 2) + (c0 + 1 + dc)) * nb + (o0 + do) % nb
                    np.add.at(hist, idx, val * wr * wc * wo)
        out[k] = hist.reshape(d + 2, d + 2, nb)[1:d + 1, 1:d + 1].ravel()
    return out


_NMS_STEPS = ((0, 1), (1, 1), (1, 0), (1, -1))  # (drow, dcol) per quantized direction


def nonmax_suppress(mag, gx, gy):
    """Thin gradient magnitude to ridge pixels along the quantized gradient direction.

    A pixel survives when it is strictly larger than its backward neighbour and
    at least as large as its forward neighbour; plateaus two pixels wide keep
    exactly one pixel.
    """
    mag = np.asarray(mag, dtype=np.float64)
    rows, cols = mag.shape
    deg = np.degrees(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(mag.shape, dtype=np.int64)
    sector[(deg >= 22.5) & (deg < 67.5)] = 1
    sector[(deg >= 67.5) & (deg < 112.5)] = 2
    sector[(deg >= 112.5) & (deg < 157.5)] = 3
    pad = np.pad(mag, 1)
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dr, dc) in enumerate(_NMS_STEPS):
        fwd = pad[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
        bwd = pad[1 - dr:1 - dr + rows, 1 - dc:1 - dc + cols]
        sel = sector == s
        keep |= sel & (mag > bwd) & (mag >= fwd)
    return keep & (mag > 0)


def hysteresis(mag, candidates, low, high):
    """Keep candidate pixels >= low that are 8-connected to a pixel >= high."""
    mag = np.asarray(mag, dtype=np.float64)
    weak = np.asarray(candidates, dtype=bool) & (mag >= low)
    strong = weak & (mag >= high)
    if not strong.any():
        return np.zeros(mag.shape, dtype=bool)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    good = np.unique(labels[strong])
    return np.isin(labels, good[good > 0])


def smo_solve(K, y, C, tol=1e-3, max_iter=100000):
    """Dual SVM solver with second-order working-set selection.

    Solves ``min 1/2 a'Qa - sum(a)`` with ``Q = yy' * K``, ``0 <= a <= C``,
    ``y'a = 0``.  Returns ``(alpha, bias, iterations)``.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.diag(K).copy()
    tau = 1e-12
    it = 0
    while it < max_iter:
        yG = -y * G
        up = ((alpha < C) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < C) & (y < 0)) | ((alpha > 0) & (y > 0))
        if not up.any() or not low.any():
            break
        cand = np.where(up, yG, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        gmin = np.min(np.where(low, yG, np.inf))
        if gmax - gmin < tol:
            break
        b = gmax - yG
        sel = low & (b > 0)
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, tau)
        score = np.where(sel, -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        if not np.isfinite(score[j]):
            break
        it += 1
        ai_old, aj_old = alpha[i], alpha[j]
        Ci, Cj = C[i], C[j]
        quad = diag[i] + diag[j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = tau
        ai, aj = ai_old, aj_old
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai = Ci
                    aj = Ci - diff
            else:
                if aj > Cj:
                    aj = Cj
                    ai = Cj + diff
        else:
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ai -= delta
            aj += delta
            if s > Ci:
                if ai > Ci:
                    ai = Ci
                    aj = s - Ci
            else:
                if aj < 0:
                    aj = 0.0
                    ai = s
            if s > Cj:
                if aj > Cj:
                    aj = Cj
                    ai = s - Cj
            else:
                if ai < 0:
                    ai = 0.0
                    aj = s
        alpha[i], alpha[j] = ai, aj
        dai, daj = ai - ai_old, aj - aj_old
        G += y * (K[i] * (y[i] * dai) + K[j] * (y[j] * daj))
    return alpha, _bias(alpha, G, y, C), it


def _bias(alpha, G, y, C):
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yG[free].mean()
    else:
        at_up = alpha >= C
        at_zero = alpha <= 0
        ub_mask = (at_up & (y < 0)) | (at_zero & (y > 0))
        lb_mask = (at_up & (y > 0)) | (at_zero & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2.0
    return -float(rho)
