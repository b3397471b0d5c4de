"""Pixel-loop kernels shared by the ground-truth pipeline and the metrics.

Every kernel exists twice: a numba-compiled loop (``*_nb``) and a vectorised
numpy/scipy version (``*_np``).  Both produce identical results; the public
wrapper picks one according to :data:`mlmsal._accel.USE_NUMBA`, or the
``backend`` argument when given ("numba" or "numpy").
"""
import numpy as np
from scipy import ndimage

from ._accel import USE_NUMBA, njit

_EIGHT = np.ones((3, 3), dtype=bool)


def _use_numba(backend):
    if backend is None:
        return USE_NUMBA
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend == "numba"


# --------------------------------------------------------------------------
# Canny non-maximum suppression
# --------------------------------------------------------------------------

@njit
def _nms_nb(mag, gx, gy):
    h, w = mag.shape
    out = np.zeros_like(mag)
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            m = mag[i, j]
            if m <= 0.0:
                continue
            ang = np.degrees(np.arctan2(gy[i, j], gx[i, j])) % 180.0
            if ang < 22.5 or ang >= 157.5:
                a = mag[i, j - 1]
                b = mag[i, j + 1]
            elif ang < 67.5:
                a = mag[i - 1, j - 1]
                b = mag[i + 1, j + 1]
            elif ang < 112.5:
                a = mag[i - 1, j]
                b = mag[i + 1, j]
            else:
                a = mag[i - 1, j + 1]
                b = mag[i + 1, j - 1]
            if m > a and m >= b:
                out[i, j] = m
    return out


def _nms_np(mag, gx, gy):
    h, w = mag.shape
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    sector = np.select(
        [(ang < 22.5) | (ang >= 157.5), ang < 67.5, ang < 112.5],
        [0, 1, 2],
        default=3,
    )
    p = np.pad(mag, 1)
    c = p[1:-1, 1:-1]
    # (before, after) neighbour pairs per sector, matching the loop kernel
    shifts = [((0, -1), (0, 1)), ((-1, -1), (1, 1)), ((-1, 0), (1, 0)), ((-1, 1), (1, -1))]
    keep = np.zeros((h, w), dtype=bool)
    for s, ((da, ea), (db, eb)) in enumerate(shifts):
        a = p[1 + da:h + 1 + da, 1 + ea:w + 1 + ea]
        b = p[1 + db:h + 1 + db, 1 + eb:w + 1 + eb]
        keep |= (sector == s) & (c > a) & (c >= b)
    keep &= c > 0.0
    keep[0, :] = keep[-1, :] = False
    keep[:, 0] = keep[:, -1] = False
    return np.where(keep, mag, 0.0)


def non_max_suppression(mag, gx, gy, backend=None):
    """Thin a gradient-magnitude map along the quantised gradient direction."""
    mag = np.ascontiguousarray(mag, dtype=np.float64)
    gx = np.ascontiguousarray(gx, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    if _use_numba(backend):
        return _nms_nb(mag, gx, gy)
    return _nms_np(mag, gx, gy)


# --------------------------------------------------------------------------
# Double-threshold hysteresis (8-connected)
# --------------------------------------------------------------------------

@njit
def _hysteresis_nb(mag, low, high):
    h, w = mag.shape
    out = np.zeros((h, w), dtype=np.bool_)
    stack_i = np.empty(h * w, dtype=np.int64)
    stack_j = np.empty(h * w, dtype=np.int64)
    top = 0
    for i in range(h):
        for j in range(w):
            if mag[i, j] >= high and not out[i, j]:
                out[i, j] = True
                stack_i[top] = i
                stack_j[top] = j
                top += 1
                while top > 0:
                    top -= 1
                    ci = stack_i[top]
                    cj = stack_j[top]
                    for di in range(-1, 2):
                        for dj in range(-1, 2):
                            ni = ci + di
                            nj = cj + dj
                            if ni < 0 or nj < 0 or ni >= h or nj >= w:
                                continue
                            if not out[ni, nj] and mag[ni, nj] >= low:
                                out[ni, nj] = True
                                stack_i[top] = ni
                                stack_j[top] = nj
                                top += 1
    return out


def _hysteresis_np(mag, low, high):
    weak = mag >= low
    labels, n = ndimage.label(weak, structure=_EIGHT)
    if n == 0:
        return np.zeros(mag.shape, dtype=bool)
    strong_labels = np.unique(labels[(mag >= high) & weak])
    strong_labels = strong_labels[strong_labels > 0]
    return np.isin(labels, strong_labels)


def hysteresis(mag, low, high, backend=None):
    """Keep weak pixels (>= low) that connect to a strong pixel (>= high)."""
    mag = np.ascontiguousarray(mag, dtype=np.float64)
    if low > high:
        raise ValueError("low threshold exceeds high threshold")
    if high <= 0.0:
        # a non-positive high threshold would promote the empty background
        return np.zeros(mag.shape, dtype=bool)
    if _use_numba(backend):
        return _hysteresis_nb(mag, float(low), float(high))
    return _hysteresis_np(mag, low, high)


# --------------------------------------------------------------------------
# Threshold sweep counting for PR curves
# --------------------------------------------------------------------------

@njit
def _threshold_counts_nb(pred, gt, thresholds):
    n = thresholds.shape[0]
    hist_pos = np.zeros(n + 1, dtype=np.int64)
    hist_neg = np.zeros(n + 1, dtype=np.int64)
    flat_p = pred.ravel()
    flat_g = gt.ravel()
    for idx in range(flat_p.shape[0]):
        # k = number of thresholds strictly below the prediction
        k = np.searchsorted(thresholds, flat_p[idx])
        if flat_g[idx]:
            hist_pos[k] += 1
        else:
            hist_neg[k] += 1
    tp = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    acc_p = 0
    acc_n = 0
    for j in range(n - 1, -1, -1):
        acc_p += hist_pos[j + 1]
        acc_n += hist_neg[j + 1]
        tp[j] = acc_p
        fp[j] = acc_n
    return tp, fp


def _threshold_counts_np(pred, gt, thresholds):
    n = thresholds.shape[0]
    k = np.searchsorted(thresholds, pred.ravel(), side="left")
    g = gt.ravel()
    hist_pos = np.bincount(k[g], minlength=n + 1)
    hist_neg = np.bincount(k[~g], minlength=n + 1)
    tp = np.cumsum(hist_pos[::-1])[::-1][1:]
    fp = np.cumsum(hist_neg[::-1])[::-1][1:]
    return tp.astype(np.int64), fp.astype(np.int64)


def threshold_counts(pred, gt, thresholds, backend=None):
    """True/false positive counts of ``pred > t`` for every sorted threshold t.

    Returns ``(tp, fp)`` integer arrays aligned with ``thresholds``.
    """
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    gt = np.ascontiguousarray(gt, dtype=bool)
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be sorted ascending")
    if _use_numba(backend):
        return _threshold_counts_nb(pred, gt, thresholds)
    return _threshold_counts_np(pred, gt, thresholds)


# --------------------------------------------------------------------------
# Tolerance matching for edge evaluation
# --------------------------------------------------------------------------

@njit
def _count_within_nb(a, b, radius):
    h, w = a.shape
    count = 0
    for i in range(h):
        for j in range(w):
            if not a[i, j]:
                continue
            i0 = max(i - radius, 0)
            i1 = min(i + radius + 1, h)
            j0 = max(j - radius, 0)
            j1 = min(j + radius + 1, w)
            hit = False
            for ii in range(i0, i1):
                for jj in range(j0, j1):
                    if b[ii, jj]:
                        hit = True
                        break
                if hit:
                    break
            if hit:
                count += 1
    return count


def _count_within_np(a, b, radius):
    if radius == 0:
        return int(np.count_nonzero(a & b))
    grown = ndimage.binary_dilation(
        b, structure=np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    )
    return int(np.count_nonzero(a & grown))


def count_within(a, b, radius, backend=None):
    """Number of set pixels of ``a`` with a set pixel of ``b`` within a
    Chebyshev distance of ``radius``."""
    a = np.ascontiguousarray(a, dtype=bool)
    b = np.ascontiguousarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if _use_numba(backend):
        return int(_count_within_nb(a, b, int(radius)))
    return _count_within_np(a, b, int(radius))
