import copy

import pytest
import torch

from mlmsal.backbone import BlockFeatures
from mlmsal.errors import ConfigurationError, ShapeError
from mlmsal.losses import mimicry_loss
from mlmsal.mutual_learning import (
    MLMConfig, MutualLearningModule, mlm_forward, select_test_branch,
)


def _block(index=2, channels=32, size=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    n_layers = 1 if index == 5 else (2 if index < 2 else 3)
    layers = [torch.rand(1, channels, size, size, generator=g, dtype=torch.float64)
              for _ in range(n_layers)]
    return BlockFeatures(index, layers, 2 ** index)


def _module(K=3, index=2, channels=32, seed=0):
    g = torch.Generator().manual_seed(seed)
    return MutualLearningModule(index, channels, MLMConfig(K=K), generator=g).double()


def test_tiny_block2_shapes_and_range():
    out = mlm_forward(_module(), _block())
    assert out.K == 3
    for p in out.student_predictions:
        assert tuple(p.shape) == (1, 1, 16, 16)
        assert ((p > 0) & (p < 1)).all()
    assert out.decoder_features is out.student_features[0]


def test_single_student_has_no_mimicry():
    out = _module(K=1)(_block())
    assert out.K == 1
    assert mimicry_loss([out.student_predictions], [1.0]).item() == 0.0


def test_identical_students_identical_predictions():
    mod = _module()
    with torch.no_grad():
        for s in mod.students[1:]:
            s.load_state_dict(mod.students[0].state_dict())
    out = mod(_block())
    for p in out.student_predictions[1:]:
        assert torch.equal(p, out.student_predictions[0])
    assert mimicry_loss([out.student_predictions], [1.0]).item() == 0.0


def test_permuting_students_permutes_outputs():
    mod = _module()
    block = _block()
    out = mod(block)
    perm = copy.deepcopy(mod)
    perm.students = torch.nn.ModuleList([perm.students[i] for i in (2, 0, 1)])
    pout = perm(block)
    for j, i in enumerate((2, 0, 1)):
        assert torch.equal(pout.student_predictions[j], out.student_predictions[i])


def test_injected_is_added_and_checked():
    mod = _module()
    block = _block()
    zero = torch.zeros_like(block.layers[2])
    a = mod(block).student_predictions[0]
    b = mod(block, zero).student_predictions[0]
    assert torch.equal(a, b)
    with pytest.raises(ShapeError):
        mod(block, torch.zeros(1, 32, 8, 8, dtype=torch.float64))


def test_block5_uses_sole_layer():
    out = _module(index=5)(_block(index=5, size=2))
    assert tuple(out.student_predictions[0].shape) == (1, 1, 2, 2)


def test_select_branch():
    out = _module()(_block())
    pred, idx = select_test_branch(out, "fixed", 1)
    assert idx == 1 and pred is out.student_predictions[1]
    a = select_test_branch(out, "seeded-random", seed=11)[1]
    assert a == select_test_branch(out, "seeded-random", seed=11)[1]
    with pytest.raises(ConfigurationError):
        select_test_branch(out, "fixed", 5)
    with pytest.raises(ConfigurationError):
        select_test_branch(out, "weighted")


def test_mimicry_gradient_pulls_toward_peer():
    a = torch.full((1, 1, 4, 4), 0.2, dtype=torch.float64, requires_grad=True)
    b = torch.full((1, 1, 4, 4), 0.6, dtype=torch.float64)
    mimicry_loss([[a, b]], [1.0]).backward()
    # descending the gradient moves a up toward b
    assert (a.grad < 0).all()


@pytest.mark.parametrize("kw", [
    {"K": 0},
    {"kernel_size_per_block": (3, 3, 4, 5, 5, 5)},
    {"dilation_per_block": (1, 1, 1, 2, 2)},
    {"kernel_size_per_block": (5, 3, 3, 5, 5, 5)},
])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        MLMConfig(**kw)
