import math

import numpy as np
import pytest
import torch

from mlmsal.errors import ConfigurationError, ShapeError
from mlmsal.losses import (
    EPS, LossWeights, bce, decoder_loss, encoder_loss, mimicry_loss,
)
from mlmsal.supervision import SupervisionSchedule, edge_bundle, saliency_bundle

D = torch.float64


def _t(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64)).reshape(1, 1, *np.shape(a))


def _square_mask(n=64):
    m = np.zeros((n, n))
    m[16:48, 20:44] = 1
    return m


def test_bce_examples():
    gt = (np.random.default_rng(0).random((8, 8)) > 0.5).astype(float)
    assert abs(bce(_t(np.full((8, 8), 0.5)), gt).item() - math.log(2)) <= 1e-9
    assert bce(_t(gt), gt).item() <= -math.log(1 - EPS) + 1e-12
    assert abs(bce(_t(np.full((4, 4), EPS)), np.ones((4, 4))).item() + math.log(EPS)) < 1e-6
    assert abs(-math.log(EPS) - 16.118) < 1e-3


def test_bce_shape_mismatch():
    with pytest.raises(ShapeError):
        bce(_t(np.zeros((4, 4))), np.zeros((5, 5)))


def test_mimicry_examples():
    a, b = _t(np.full((4, 4), 0.2)), _t(np.full((4, 4), 0.6))
    assert abs(mimicry_loss([[a, b]], [1.0]).item() - 0.16) < 1e-12
    assert mimicry_loss([[a, a.clone()]], [1.0]).item() == 0.0
    assert mimicry_loss([[a]], [1.0]).item() == 0.0


def test_mimicry_permutation_symmetric():
    rng = np.random.default_rng(3)
    preds = [_t(rng.random((6, 6))) for _ in range(4)]
    a = mimicry_loss([preds], [1.0]).item()
    b = mimicry_loss([preds[::-1]], [1.0]).item()
    assert abs(a - b) < 1e-15


def test_mimicry_ragged():
    with pytest.raises(ShapeError):
        mimicry_loss([[_t(np.zeros((4, 4))), _t(np.zeros((2, 2)))]], [1.0])


def _inputs(rng, K=3):
    sal = saliency_bundle(_square_mask())
    edge = edge_bundle((rng.random((64, 64)) > 0.9).astype(float))
    sizes = [64, 32, 16, 8, 4, 2]
    mlm = [[_t(rng.uniform(0.01, 0.99, (s, s))) for _ in range(K)] for s in sizes]
    em = [_t(rng.uniform(0.01, 0.99, (s, s))) for s in sizes[:3]]
    e_star = _t(rng.uniform(0.01, 0.99, (64, 64)))
    dec = [_t(rng.uniform(0.01, 0.99, (s, s))) for s in (4, 8, 16, 32, 64)]
    return sal, edge, mlm, em, e_star, dec


def test_encoder_weight_linearity():
    rng = np.random.default_rng(0)
    sal, edge, mlm, em, e_star, _ = _inputs(rng)
    sched = SupervisionSchedule()
    w = LossWeights()
    l_enc, l_s, l_e, l_m = encoder_loss(mlm, em, e_star, sal, edge, sched, w)
    w2 = LossWeights(theta_s=1.4)
    l_enc2 = encoder_loss(mlm, em, e_star, sal, edge, sched, w2)[0]
    assert abs((l_enc2 - l_enc).item() - 0.7 * l_s.item()) < 1e-12
    w0 = LossWeights(theta_e=0.0)
    zero_edge = encoder_loss(mlm, [e * 0 + 0.5 for e in em], e_star * 0 + 0.5, sal, edge, sched, w0)[0]
    assert abs(encoder_loss(mlm, em, e_star, sal, edge, sched, w0)[0].item() - zero_edge.item()) < 1e-12


def test_encoder_unit_terms_sum_to_one():
    w = LossWeights()
    assert abs(w.theta_s * 1 + w.theta_e * 1 + w.theta_m * 1 - 1.0) < 1e-15


def test_perfect_predictions_near_zero():
    sal = saliency_bundle(_square_mask())
    e = np.zeros((64, 64))
    e[10, 5:50] = 1
    edge = edge_bundle(e)
    sched = SupervisionSchedule()
    mlm = [[_t(sal.level(sched.encoder_kinds[i], i))] * 3 for i in range(6)]
    em = [_t(edge.level("E", i)) for i in range(3)]
    l_enc = encoder_loss(mlm, em, _t(e), sal, edge, sched, LossWeights())[0]
    assert 0 <= l_enc.item() <= 1e-6
    dec = [_t(sal.level(sched.decoder_kinds[i][0], 4 - i)) for i in range(5)]
    assert decoder_loss(dec, sal, sched, LossWeights().r_dec).item() <= 1e-6


def test_decoder_examples():
    rng = np.random.default_rng(1)
    sal, *_, dec = _inputs(rng)
    sched = SupervisionSchedule()
    half = [_t(np.full(tuple(p.shape[-2:]), 0.5)) for p in dec]
    assert abs(decoder_loss(half, sal, sched, (1.0,) * 5).item() - 5 * math.log(2)) < 1e-9
    assert decoder_loss(dec, sal, sched, (0.0,) * 5).item() == 0.0
    with pytest.raises(ShapeError):
        decoder_loss(dec[:4], sal, sched, (1.0,) * 5)
    with pytest.raises(ShapeError):
        decoder_loss(dec[::-1], sal, sched, (1.0,) * 5)


def test_components_nonnegative_finite():
    rng = np.random.default_rng(2)
    sal, edge, mlm, em, e_star, dec = _inputs(rng)
    sched = SupervisionSchedule()
    for v in encoder_loss(mlm, em, e_star, sal, edge, sched, LossWeights()):
        assert torch.isfinite(v) and v.item() >= 0
    assert decoder_loss(dec, sal, sched, (1.0,) * 5).item() >= 0


def test_weight_validation():
    with pytest.raises(ConfigurationError):
        LossWeights(r_s=(1.0,) * 5)
    with pytest.raises(ConfigurationError):
        LossWeights(theta_m=-0.1)
