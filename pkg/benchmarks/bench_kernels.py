"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--size 256] [--repeat 20]

Both backends are called explicitly, so MLMSAL_DISABLE_NUMBA does not
matter here.  The first numba call (compilation or cache load) is excluded.
"""
import argparse
import time

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from mlmsal import kernels
from mlmsal.metrics import threshold_grid


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _cases(n, rng):
    img = ndimage.gaussian_filter(rng.random((n, n)), 2)
    gy = ndimage.sobel(img, axis=0)
    gx = ndimage.sobel(img, axis=1)
    mag = np.hypot(gx, gy)
    thin = kernels.non_max_suppression(mag, gx, gy)
    pred = rng.random((n, n))
    gt = rng.random((n, n)) > 0.7
    edges = skeletonize(pred > 0.8)
    thr = threshold_grid()
    peak = mag.max()
    return {
        "non_max_suppression": lambda b: kernels.non_max_suppression(mag, gx, gy, backend=b),
        "hysteresis": lambda b: kernels.hysteresis(thin, 0.1 * peak, 0.3 * peak, backend=b),
        "threshold_counts": lambda b: kernels.threshold_counts(pred, gt, thr, backend=b),
        "count_within": lambda b: kernels.count_within(edges, gt, 1, backend=b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cases = _cases(args.size, np.random.default_rng(args.seed))
    print(f"{args.size}x{args.size} map, best of {args.repeat}")
    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  same")
    for name, fn in cases.items():
        a, b = fn("numba"), fn("numpy")  # warm-up, also the equality check
        same = all(np.array_equal(x, y) for x, y in zip(np.atleast_1d(a), np.atleast_1d(b))) \
            if isinstance(a, tuple) else np.array_equal(a, b)
        t_nb = _best(lambda: fn("numba"), args.repeat)
        t_np = _best(lambda: fn("numpy"), args.repeat)
        print(f"{name:<22}{t_nb * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_nb:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
