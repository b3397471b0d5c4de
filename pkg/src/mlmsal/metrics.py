"""Saliency and edge evaluation: PR curve, adaptive F-measure, MAE,
S-measure, and ODS/OIS edge F-scores with tolerance matching."""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage.morphology import skeletonize

from . import kernels
from .errors import ShapeError, ValidationError

BETA_SQ = 0.3
N_THRESHOLDS = 255
_EPS = np.finfo(np.float64).eps


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall"])
            for t, p, r in zip(self.thresholds, self.precision, self.recall):
                w.writerow([f"{t:.6f}", f"{p:.6f}", f"{r:.6f}"])


@dataclass
class MetricReport:
    mean_f_beta: float = None
    mae: float = None
    s_measure: float = None
    pr: PRCurve = field(default=None, repr=False)
    ods: float = None
    ois: float = None

    def saliency_items(self):
        return {"f_beta": self.mean_f_beta, "mae": self.mae, "s_measure": self.s_measure}

    def edge_items(self):
        return {"ods": self.ods, "ois": self.ois}


def write_report(items, path):
    """Key-value text report, one ``key=value`` line per metric."""
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v:.6f}\n")


def read_report(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k.strip()] = float(v)
    return out


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    pred = pred.reshape(pred.shape[-2:]) if pred.ndim > 2 and pred.size == np.prod(pred.shape[-2:]) else pred
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def _check_lists(preds, gts):
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")


def threshold_grid(n=N_THRESHOLDS):
    if n < 2:
        raise ValidationError("need at least 2 thresholds")
    return np.linspace(0.0, 1.0, n)


def _precision_recall(tp, fp, n_pos):
    tp = np.asarray(tp, dtype=np.float64)
    fp = np.asarray(fp, dtype=np.float64)
    denom = tp + fp
    precision = np.divide(tp, denom, out=np.ones_like(tp), where=denom > 0)
    recall = np.divide(tp, n_pos, out=np.zeros_like(tp), where=np.asarray(n_pos) > 0)
    return precision, recall


def pr_curve(preds, gts, n_thresholds=N_THRESHOLDS, backend=None):
    """Dataset-level PR curve; a pixel is predicted salient when ``pred > t``.

    Precision is 1 when nothing is predicted; recall is 0 when the ground
    truth is empty.
    """
    _check_lists(preds, gts)
    thr = threshold_grid(n_thresholds)
    tp = np.zeros(n_thresholds, dtype=np.int64)
    fp = np.zeros(n_thresholds, dtype=np.int64)
    n_pos = 0
    for pred, gt in zip(preds, gts):
        pred, gt = _pair(pred, gt)
        g = gt >= 0.5
        t, f = kernels.threshold_counts(pred, g, thr, backend=backend)
        tp += t
        fp += f
        n_pos += int(g.sum())
    precision, recall = _precision_recall(tp, fp, n_pos)
    return PRCurve(thr, precision, recall)


def f_beta(precision, recall, beta_sq=BETA_SQ):
    if not (0 <= precision <= 1 and 0 <= recall <= 1):
        raise ValidationError(f"precision/recall outside [0, 1]: {precision}, {recall}")
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta_sq) * precision * recall / denom


def adaptive_threshold(pred):
    return min(1.0, 2.0 * float(np.mean(pred)))


def adaptive_f_measure(pred, gt, beta_sq=BETA_SQ):
    """F-measure of one map binarised at twice its mean.

    Zero-valued pixels never count as salient, so an all-zero map scores 0.
    """
    pred, gt = _pair(pred, gt)
    thr = adaptive_threshold(pred)
    binary = (pred >= thr) & (pred > 0)
    g = gt >= 0.5
    tp = np.count_nonzero(binary & g)
    n_pred = np.count_nonzero(binary)
    n_pos = np.count_nonzero(g)
    precision = tp / n_pred if n_pred else 1.0
    recall = tp / n_pos if n_pos else 0.0
    return f_beta(precision, recall, beta_sq)


def mean_f_measure(preds, gts, beta_sq=BETA_SQ):
    _check_lists(preds, gts)
    if not preds:
        return 0.0
    return float(np.mean([adaptive_f_measure(p, g, beta_sq) for p, g in zip(preds, gts)]))


def mae(pred, gt):
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.abs(pred - np.asarray(gt, dtype=np.float64))))


def mean_mae(preds, gts):
    _check_lists(preds, gts)
    return float(np.mean([mae(p, g) for p, g in zip(preds, gts)])) if preds else 0.0


# --------------------------------------------------------------------------
# S-measure (object-aware + region-aware structural similarity)
# --------------------------------------------------------------------------

def _object_score(values):
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def object_similarity(pred, gt):
    g = gt >= 0.5
    fg = _object_score(pred[g])
    bg = _object_score(1.0 - pred[~g])
    u = g.mean()
    return u * fg + (1 - u) * bg


def _ssim(pred, gt):
    n = pred.size
    x = pred.mean()
    y = gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _centroid(g):
    h, w = g.shape
    total = g.sum()
    if total == 0:
        return w // 2, h // 2
    rows, cols = np.nonzero(g)
    # 1-based rounding convention of the reference implementation
    cx = int(np.round(cols.mean() + 1))
    cy = int(np.round(rows.mean() + 1))
    return cx, cy


def region_similarity(pred, gt):
    g = (gt >= 0.5).astype(np.float64)
    h, w = g.shape
    cx, cy = _centroid(g)
    area = h * w
    score = 0.0
    quads = [
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ]
    for rs, cs in quads:
        p, q = pred[rs, cs], g[rs, cs]
        if q.size == 0:
            continue
        score += q.size / area * _ssim(p, q)
    return score


def combine_s_measure(s_object, s_region, alpha=0.5):
    return alpha * s_object + (1 - alpha) * s_region


def s_measure_components(pred, gt):
    pred, gt = _pair(pred, gt)
    return object_similarity(pred, gt), region_similarity(pred, gt)


def s_measure(pred, gt, alpha=0.5):
    pred, gt = _pair(pred, gt)
    y = float(np.mean(gt >= 0.5))
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    so, sr = s_measure_components(pred, gt)
    return float(max(combine_s_measure(so, sr, alpha), 0.0))


def mean_s_measure(preds, gts, alpha=0.5):
    _check_lists(preds, gts)
    return float(np.mean([s_measure(p, g, alpha) for p, g in zip(preds, gts)])) if preds else 0.0


# --------------------------------------------------------------------------
# Edge ODS / OIS
# --------------------------------------------------------------------------

def edge_match_counts(pred, gt, thresholds, tolerance_px=1, backend=None):
    """Per threshold: (matched predictions, predictions, matched gt, gt).

    Predictions are binarised with ``pred > t`` and skeletonised; a predicted
    pixel is correct if a GT edge pixel lies within ``tolerance_px``
    (Chebyshev), and a GT pixel is recalled if a thinned prediction does.
    """
    pred, gt = _pair(pred, gt)
    g = gt >= 0.5
    n_gt = int(g.sum())
    out = np.zeros((len(thresholds), 4), dtype=np.int64)
    for k, t in enumerate(thresholds):
        b = pred > t
        if b.any():
            b = skeletonize(b)
        n_pred = int(b.sum())
        out[k] = (
            kernels.count_within(b, g, tolerance_px, backend=backend),
            n_pred,
            kernels.count_within(g, b, tolerance_px, backend=backend),
            n_gt,
        )
    return out


def _f_from_counts(c):
    matched_p, n_p, matched_g, n_g = (c[..., i].astype(np.float64) for i in range(4))
    precision = np.divide(matched_p, n_p, out=np.ones_like(matched_p), where=n_p > 0)
    recall = np.divide(matched_g, n_g, out=np.zeros_like(matched_g), where=n_g > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)


def edge_ods_ois(preds, gts, tolerance_px=1, n_thresholds=N_THRESHOLDS, backend=None):
    """ODS: best F at one threshold shared by the whole dataset (per-image F
    averaged); OIS: mean of every image's own best F over the same grid."""
    _check_lists(preds, gts)
    if tolerance_px < 0:
        raise ValidationError("tolerance_px must be non-negative")
    if not preds:
        return 0.0, 0.0
    thr = threshold_grid(n_thresholds)
    f = np.stack([
        _f_from_counts(edge_match_counts(p, g, thr, tolerance_px, backend))
        for p, g in zip(preds, gts)
    ])  # (images, thresholds)
    ods = float(f.mean(axis=0).max())
    ois = float(f.max(axis=1).mean())
    return ods, ois
