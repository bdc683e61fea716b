"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from typeret import imgproc, kernels, synth


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads():
    page = synth.render_page(synth.make_type("b", "round", 1), np.random.default_rng(0), size=(400, 400))
    img = page.astype(np.float64)
    rng = np.random.default_rng(1)
    n = 500
    xs = rng.integers(8, 392, n)
    ys = rng.integers(8, 392, n)
    sig = rng.uniform(1.0, 6.0, n)
    ang = rng.uniform(0, 2 * np.pi, n)
    gx, gy, mag = imgproc.sobel_gradients(page)
    X = rng.normal(size=(301, 64))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    K = X @ X.T
    y = np.r_[1.0, -np.ones(300)]
    C = np.r_[1000.0, np.ones(300)]
    nms = kernels.python.nonmax_suppress(mag, gx, gy)
    lo, hi = imgproc.hysteresis_from_magnitudes(mag)
    return {
        "orientation_histograms (500 kp)": lambda m: m.orientation_histograms(img, xs, ys, sig),
        "sift_descriptors (500 kp)": lambda m: m.sift_descriptors(img, xs, ys, sig, ang),
        "nonmax_suppress (400x400)": lambda m: m.nonmax_suppress(mag, gx, gy),
        "hysteresis (400x400)": lambda m: m.hysteresis(mag, nms, lo, hi),
        "smo_solve (1 vs 300)": lambda m: m.smo_solve(K, y, C, 1e-6, 100000),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.compiled is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
    print(f"{'kernel':<34} {'python':>10} {'cython':>10} {'speedup':>8}")
    for name, fn in workloads().items():
        tp = best_of(lambda: fn(kernels.python), args.repeat)
        if kernels.compiled is None:
            print(f"{name:<34} {tp * 1e3:>8.1f}ms {'-':>10} {'-':>8}")
            continue
        tc = best_of(lambda: fn(kernels.compiled), args.repeat)
        print(f"{name:<34} {tp * 1e3:>8.1f}ms {tc * 1e3:>8.1f}ms {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
