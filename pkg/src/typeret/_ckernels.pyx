# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``; identical semantics."""
import numpy as np

from libc.math cimport atan2, cos, sin, sqrt, exp, floor, fmod, M_PI, INFINITY

cdef int DESC_WIDTH = 4
cdef int DESC_BINS = 8
cdef double DESC_SCALE_FACTOR = 3.0
cdef double ORI_SIGMA_FACTOR = 1.5
cdef double ORI_RADIUS_FACTOR = 4.5


cdef inline long iround(double v) nogil:
    # round half up; callers only pass non-negative values
    if v >= 0:
        return <long>floor(v + 0.5)
    return -<long>floor(-v + 0.5)


def orientation_histograms(img, xs, ys, sigmas, int nbins=36):
    cdef double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef long[::1] xv = np.ascontiguousarray(xs, dtype=np.int64)
    cdef long[::1] yv = np.ascontiguousarray(ys, dtype=np.int64)
    cdef double[::1] sv = np.ascontiguousarray(sigmas, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    out_arr = np.zeros((n, nbins))
    cdef double[:, ::1] out = out_arr
    cdef long rows = im.shape[0], cols = im.shape[1]
    cdef Py_ssize_t k
    cdef long x, y, radius, r, c, r0, r1, c0, c1, b
    cdef double sigma, expf, dx, dy, w, mag, ang, scale = nbins / (2.0 * M_PI)
    with nogil:
        for k in range(n):
            x = xv[k]
            y = yv[k]
            sigma = sv[k]
            radius = iround(ORI_RADIUS_FACTOR * sigma)
            expf = -1.0 / (2.0 * (ORI_SIGMA_FACTOR * sigma) * (ORI_SIGMA_FACTOR * sigma))
            r0 = y - radius if y - radius > 1 else 1
            r1 = y + radius if y + radius < rows - 2 else rows - 2
            c0 = x - radius if x - radius > 1 else 1
            c1 = x + radius if x + radius < cols - 2 else cols - 2
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    dx = im[r, c + 1] - im[r, c - 1]
                    dy = im[r + 1, c] - im[r - 1, c]
                    w = exp(((r - y) * (r - y) + (c - x) * (c - x)) * expf)
                    mag = sqrt(dx * dx + dy * dy)
                    ang = atan2(dy, dx)
                    b = _rint(ang * scale) % nbins
                    if b < 0:
                        b += nbins
                    out[k, b] += w * mag
    return out_arr


cdef inline long _rint(double v) nogil:
    # round half to even, matching numpy.rint
    cdef double f = floor(v)
    cdef double diff = v - f
    if diff > 0.5:
        return <long>f + 1
    if diff < 0.5:
        return <long>f
    if fmod(f, 2.0) == 0:
        return <long>f
    return <long>f + 1


def sift_descriptors(img, xs, ys, sigmas, angles):
    cdef double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef long[::1] xv = np.ascontiguousarray(xs, dtype=np.int64)
    cdef long[::1] yv = np.ascontiguousarray(ys, dtype=np.int64)
    cdef double[::1] sv = np.ascontiguousarray(sigmas, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(angles, dtype=np.float64)
    cdef int d = DESC_WIDTH, nb = DESC_BINS
    cdef Py_ssize_t n = xv.shape[0]
    out_arr = np.zeros((n, d * d * nb))
    cdef double[:, ::1] out = out_arr
    hist_arr = np.zeros((d + 2) * (d + 2) * nb)
    cdef double[::1] hist = hist_arr
    cdef long rows = im.shape[0], cols = im.shape[1]
    cdef long max_radius = <long>sqrt(<double>(rows * rows + cols * cols))
    cdef double bins_per_rad = nb / (2.0 * M_PI)
    cdef double exp_scale = -1.0 / (d * d * 0.5)
    cdef Py_ssize_t k, q
    cdef long x, y, radius, i, j, r, c, r0, c0, o0, dr, dc, do, ri, ci, oi
    cdef double hist_width, cos_t, sin_t, c_rot, r_rot, rbin, cbin, dx, dy, w, val, ob
    cdef double fr, fc, fo, wr, wc, wo, angle
    with nogil:
        for k in range(n):
            for q in range(hist.shape[0]):
                hist[q] = 0.0
            x = xv[k]
            y = yv[k]
            angle = av[k]
            hist_width = DESC_SCALE_FACTOR * sv[k]
            radius = iround(hist_width * sqrt(2.0) * (d + 1) * 0.5)
            if radius > max_radius:
                radius = max_radius
            cos_t = cos(angle) / hist_width
            sin_t = sin(angle) / hist_width
            for i in range(-radius, radius + 1):
                for j in range(-radius, radius + 1):
                    c_rot = j * cos_t + i * sin_t
                    r_rot = -j * sin_t + i * cos_t
                    rbin = r_rot + d / 2.0 - 0.5
                    cbin = c_rot + d / 2.0 - 0.5
                    r = y + i
                    c = x + j
                    if not (rbin > -1 and rbin < d and cbin > -1 and cbin < d):
                        continue
                    if not (r > 0 and r < rows - 1 and c > 0 and c < cols - 1):
                        continue
                    dx = im[r, c + 1] - im[r, c - 1]
                    dy = im[r + 1, c] - im[r - 1, c]
                    w = exp((c_rot * c_rot + r_rot * r_rot) * exp_scale)
                    val = sqrt(dx * dx + dy * dy) * w
                    ob = (atan2(dy, dx) - angle) * bins_per_rad
                    r0 = <long>floor(rbin)
                    c0 = <long>floor(cbin)
                    o0 = <long>floor(ob)
                    fr = rbin - r0
                    fc = cbin - c0
                    fo = ob - o0
                    o0 = o0 % nb
                    if o0 < 0:
                        o0 += nb
                    for dr in range(2):
                        wr = fr if dr else 1.0 - fr
                        ri = r0 + 1 + dr
                        for dc in range(2):
                            wc = fc if dc else 1.0 - fc
                            ci = c0 + 1 + dc
                            for do in range(2):
                                wo = fo if do else 1.0 - fo
                                oi = (o0 + do) % nb
                                hist[(ri * (d + 2) + ci) * nb + oi] += val * wr * wc * wo
            q = 0
            for ri in range(1, d + 1):
                for ci in range(1, d + 1):
                    for oi in range(nb):
                        out[k, q] = hist[(ri * (d + 2) + ci) * nb + oi]
                        q += 1
    return out_arr


def nonmax_suppress(mag, gx, gy):
    cdef double[:, ::1] m = np.ascontiguousarray(mag, dtype=np.float64)
    cdef double[:, ::1] ax = np.ascontiguousarray(gx, dtype=np.float64)
    cdef double[:, ::1] ay = np.ascontiguousarray(gy, dtype=np.float64)
    cdef long rows = m.shape[0], cols = m.shape[1]
    keep_arr = np.zeros((rows, cols), dtype=np.uint8)
    cdef unsigned char[:, ::1] keep = keep_arr
    cdef long r, c, dr, dc
    cdef double deg, v, fwd, bwd
    with nogil:
        for r in range(rows):
            for c in range(cols):
                v = m[r, c]
                if v <= 0:
                    continue
                deg = atan2(ay[r, c], ax[r, c]) * (180.0 / M_PI)
                deg = fmod(deg, 180.0)
                if deg < 0:
                    deg += 180.0
                if deg >= 180.0:
                    deg -= 180.0
                if deg >= 22.5 and deg < 67.5:
                    dr = 1
                    dc = 1
                elif deg >= 67.5 and deg < 112.5:
                    dr = 1
                    dc = 0
                elif deg >= 112.5 and deg < 157.5:
                    dr = 1
                    dc = -1
                else:
                    dr = 0
                    dc = 1
                fwd = 0.0
                bwd = 0.0
                if 0 <= r + dr < rows and 0 <= c + dc < cols:
                    fwd = m[r + dr, c + dc]
                if 0 <= r - dr < rows and 0 <= c - dc < cols:
                    bwd = m[r - dr, c - dc]
                if v > bwd and v >= fwd:
                    keep[r, c] = 1
    return keep_arr.astype(bool)


def hysteresis(mag, candidates, double low, double high):
    cdef double[:, ::1] m = np.ascontiguousarray(mag, dtype=np.float64)
    cdef unsigned char[:, ::1] cand = np.ascontiguousarray(candidates, dtype=np.uint8)
    cdef long rows = m.shape[0], cols = m.shape[1]
    out_arr = np.zeros((rows, cols), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    stack_arr = np.empty(rows * cols, dtype=np.int64)
    cdef long[::1] stack = stack_arr
    cdef long top = 0, r, c, p, rr, cc, dr, dc
    with nogil:
        for r in range(rows):
            for c in range(cols):
                if cand[r, c] and m[r, c] >= high and not out[r, c]:
                    out[r, c] = 1
                    stack[top] = r * cols + c
                    top += 1
                    while top > 0:
                        top -= 1
                        p = stack[top]
                        rr = p // cols
                        cc = p - rr * cols
                        for dr in range(-1, 2):
                            for dc in range(-1, 2):
                                if rr + dr < 0 or rr + dr >= rows or cc + dc < 0 or cc + dc >= cols:
                                    continue
                                if out[rr + dr, cc + dc] or not cand[rr + dr, cc + dc]:
                                    continue
                                if m[rr + dr, cc + dc] >= low:
                                    out[rr + dr, cc + dc] = 1
                                    stack[top] = (rr + dr) * cols + cc + dc
                                    top += 1
    return out_arr.astype(bool)


def smo_solve(K, y, C, double tol=1e-3, long max_iter=100000):
    cdef double[:, ::1] Km = np.ascontiguousarray(K, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    alpha_arr = np.zeros(n)
    G_arr = -np.ones(n)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = G_arr
    cdef double tau = 1e-12
    cdef long it = 0
    cdef Py_ssize_t t, i, j
    cdef double gmax, gmin, ygt, b, a, score, best
    cdef double ai, aj, ai_old, aj_old, Ci, Cj, quad, delta, diff, s, dai, daj
    cdef bint up, low
    with nogil:
        while it < max_iter:
            gmax = -INFINITY
            gmin = INFINITY
            i = -1
            for t in range(n):
                ygt = -yv[t] * G[t]
                if yv[t] > 0:
                    up = alpha[t] < Cv[t]
                    low = alpha[t] > 0
                else:
                    up = alpha[t] > 0
                    low = alpha[t] < Cv[t]
                if up and ygt > gmax:
                    gmax = ygt
                    i = t
                if low and ygt < gmin:
                    gmin = ygt
            if i < 0 or gmin == INFINITY:
                break
            if gmax - gmin < tol:
                break
            j = -1
            best = INFINITY
            for t in range(n):
                if yv[t] > 0:
                    low = alpha[t] > 0
                else:
                    low = alpha[t] < Cv[t]
                if not low:
                    continue
                b = gmax + yv[t] * G[t]
                if b <= 0:
                    continue
                a = Km[i, i] + Km[t, t] - 2.0 * Km[i, t]
                if a <= 0:
                    a = tau
                score = -(b * b) / a
                if score < best:
                    best = score
                    j = t
            if j < 0:
                break
            it += 1
            ai_old = alpha[i]
            aj_old = alpha[j]
            ai = ai_old
            aj = aj_old
            Ci = Cv[i]
            Cj = Cv[j]
            quad = Km[i, i] + Km[j, j] - 2.0 * Km[i, j]
            if quad <= 0:
                quad = tau
            if yv[i] != yv[j]:
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
            alpha[i] = ai
            alpha[j] = aj
            dai = ai - ai_old
            daj = aj - aj_old
            for t in range(n):
                G[t] += yv[t] * (Km[i, t] * (yv[i] * dai) + Km[j, t] * (yv[j] * daj))
    from typeret._pykernels import _bias
    return alpha_arr, _bias(alpha_arr, G_arr, np.asarray(yv), np.asarray(Cv)), it
