import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mlmsal import metrics
from mlmsal.errors import ShapeError, ValidationError


def _blob(n=16, seed=0):
    g = np.zeros((n, n))
    g[4:11, 3:9] = 1
    return g


def test_pr_perfect_and_empty_prediction():
    g = _blob()
    pr = metrics.pr_curve([g], [g])
    inner = (pr.thresholds > 0) & (pr.thresholds < 1)
    assert np.all(pr.precision[inner] == 1) and np.all(pr.recall[inner] == 1)
    pr0 = metrics.pr_curve([np.zeros_like(g)], [g])
    assert np.all(pr0.recall == 0) and np.all(pr0.precision == 1)


def test_pr_shape_errors():
    with pytest.raises(ShapeError):
        metrics.pr_curve([np.zeros((4, 4))], [np.zeros((5, 5))])
    with pytest.raises(ShapeError):
        metrics.pr_curve([np.zeros((4, 4))], [])
    with pytest.raises(ValidationError):
        metrics.threshold_grid(1)


def test_f_beta_examples():
    assert abs(metrics.f_beta(0.8, 0.5) - 0.52 / 0.74) < 1e-12
    assert metrics.f_beta(1.0, 0.0) == 0.0
    for p in (0.1, 0.42, 0.9):
        assert abs(metrics.f_beta(p, p) - p) < 1e-12
    with pytest.raises(ValidationError):
        metrics.f_beta(1.2, 0.5)


def test_adaptive_f_examples():
    g = np.zeros((8, 8))
    g[:4, :4] = 1  # 25% foreground: threshold 0.5
    assert metrics.adaptive_threshold(g) == 0.5
    assert metrics.adaptive_f_measure(g, g) == 1.0
    assert metrics.adaptive_f_measure(np.zeros_like(g), g) == 0.0
    assert abs(metrics.mean_f_measure([g] * 3, [g] * 3) - 1.0) < 1e-15


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1)), st.integers(1, 4))
def test_mean_f_invariant_under_copies(pred, copies):
    g = (pred > 0.5).astype(float)
    one = metrics.mean_f_measure([pred], [g])
    many = metrics.mean_f_measure([pred] * copies, [g] * copies)
    assert abs(one - many) < 1e-12


def test_mae_examples():
    g = _blob()
    assert metrics.mae(g, g) == 0.0
    assert metrics.mae(np.ones((4, 4)), np.zeros((4, 4))) == 1.0
    assert metrics.mae(np.full((4, 4), 0.25), np.zeros((4, 4))) == 0.25
    with pytest.raises(ShapeError):
        metrics.mae(np.zeros((4, 4)), np.zeros((4, 5)))


def test_s_measure_examples():
    assert metrics.combine_s_measure(0.8, 0.6, 0.5) == pytest.approx(0.7, abs=1e-15)
    assert metrics.combine_s_measure(0.8, 0.6, 1.0) == 0.8
    g = _blob()
    assert abs(metrics.s_measure(g, g) - 1.0) < 1e-9
    assert metrics.s_measure(np.zeros_like(g), np.zeros_like(g)) == 1.0
    assert metrics.s_measure(np.ones_like(g), np.ones_like(g)) == 1.0


def test_s_measure_reference_value():
    # hand-checked against the reference object/region formulas
    g = np.zeros((4, 4))
    g[:2, :2] = 1
    pred = g * 0.8
    so, sr = metrics.s_measure_components(pred, g)
    eps = np.finfo(float).eps
    fg = 2 * 0.8 / (0.64 + 1 + 0 + eps)
    bg = 2 * 1.0 / (1 + 1 + 0 + eps)
    assert abs(so - (0.25 * fg + 0.75 * bg)) < 1e-12
    assert 0 <= sr <= 1


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (12, 12), elements=st.floats(0, 1)))
def test_metric_ranges(pred):
    g = np.zeros((12, 12))
    g[3:9, 2:7] = 1
    assert 0 <= metrics.mae(pred, g) <= 1
    assert 0 <= metrics.adaptive_f_measure(pred, g) <= 1
    assert 0 <= metrics.s_measure(pred, g) <= 1 + 1e-12


def _edge_gt(n=32):
    e = np.zeros((n, n))
    e[8, 4:28] = 1
    e[4:28, 20] = 1
    return e


def test_edge_perfect_and_empty():
    e = _edge_gt()
    assert metrics.edge_ods_ois([e], [e]) == (1.0, 1.0)
    assert metrics.edge_ods_ois([np.zeros_like(e)], [e]) == (0.0, 0.0)
    with pytest.raises(ValidationError):
        metrics.edge_ods_ois([e], [e], tolerance_px=-1)


def test_edge_tolerance():
    e = _edge_gt()
    shifted = np.roll(e, 1, axis=0)
    assert metrics.edge_ods_ois([shifted], [e], tolerance_px=0)[0] < 0.5
    assert metrics.edge_ods_ois([shifted], [e], tolerance_px=1)[0] == 1.0


@pytest.mark.parametrize("seed", range(3))
def test_ois_at_least_ods(seed):
    rng = np.random.default_rng(seed)
    gts = [_edge_gt() for _ in range(3)]
    preds = [np.clip(g * rng.uniform(0.3, 1.0) + rng.random(g.shape) * 0.5, 0, 1) for g in gts]
    ods, ois = metrics.edge_ods_ois(preds, gts, n_thresholds=33)
    assert 0 <= ods <= ois <= 1


def test_edge_backends_agree():
    rng = np.random.default_rng(5)
    e = _edge_gt()
    pred = np.clip(e + rng.random(e.shape) * 0.6, 0, 1)
    a = metrics.edge_ods_ois([pred], [e], n_thresholds=21, backend="numba")
    b = metrics.edge_ods_ois([pred], [e], n_thresholds=21, backend="numpy")
    assert a == b


def test_report_roundtrip(tmp_path):
    items = {"f_beta": 0.5, "mae": 0.125, "s_measure": 0.75}
    metrics.write_report(items, tmp_path / "r.txt")
    assert metrics.read_report(tmp_path / "r.txt") == items
    pr = metrics.pr_curve([_blob()], [_blob()], n_thresholds=5)
    pr.to_csv(tmp_path / "pr.csv")
    lines = (tmp_path / "pr.csv").read_text().splitlines()
    assert lines[0] == "threshold,precision,recall" and len(lines) == 6
