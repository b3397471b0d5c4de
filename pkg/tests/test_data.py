import filecmp
import itertools

import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from mlmsal.data import (
    SyntheticSpec, generate_synthetic, load_dataset, paired_batches, paired_indices, random_mask,
)
from mlmsal.errors import ConfigurationError, IngestionError
from mlmsal.supervision import extract_foreground_contour, morphological_boundary


def _tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    for sub in cmp.common_dirs:
        if not _tree_equal(a / sub, b / sub):
            return False
    # dircmp compares shallowly; force byte comparison
    return all(filecmp.cmp(a / f, b / f, shallow=False) for f in cmp.common_files)


def test_generation_is_byte_deterministic(tmp_path):
    spec = SyntheticSpec(count=8, seed=7)
    generate_synthetic(spec, tmp_path / "a")
    generate_synthetic(spec, tmp_path / "b")
    assert _tree_equal(tmp_path / "a", tmp_path / "b")
    assert len(list((tmp_path / "a" / "saliency" / "images").iterdir())) == 8


def test_rectangles_only(tmp_path):
    generate_synthetic(SyntheticSpec(count=6, seed=1, shapes=("rectangle",)), tmp_path)
    for rec in load_dataset(tmp_path / "saliency", "saliency"):
        ys, xs = np.nonzero(rec.target)
        box = rec.target[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
        assert box.all()


def test_area_bounds(tmp_path):
    generate_synthetic(SyntheticSpec(count=40, seed=2), tmp_path)
    for rec in load_dataset(tmp_path / "saliency", "saliency"):
        frac = sum(int(v) for v in rec.target.ravel()) / rec.target.size
        assert 0.05 <= frac <= 0.60


def test_random_mask_contour_within_boundary():
    rng = np.random.default_rng(9)
    for _ in range(10):
        mask, kind = random_mask(rng)
        c = extract_foreground_contour(mask.astype(np.uint8))
        near = ndimage.binary_dilation(morphological_boundary(mask), np.ones((3, 3)), iterations=1)
        assert (c & near).sum() >= 0.95 * c.sum()


def test_edge_targets_contain_contours(synthetic_records):
    _, edge = synthetic_records
    for rec in edge:
        assert rec.kind == "edge"
        assert set(np.unique(rec.target)) <= {0.0, 1.0}
        assert rec.target.any()


@pytest.mark.parametrize("kw", [
    {"shapes": ("hexagon",)},
    {"fg_range": (0.3, 0.5)},
    {"min_area": 0.7},
    {"count": -1},
])
def test_spec_validation(kw):
    with pytest.raises(ConfigurationError):
        SyntheticSpec(**kw)


def test_spec_unknown_key():
    with pytest.raises(ConfigurationError, match="colour"):
        SyntheticSpec.from_dict({"colour": 3})


def _write_pair(root, sid, mask_val=255, with_target=True):
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "targets").mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.full((8, 8, 3), 100, np.uint8)).save(root / "images" / f"{sid}.png")
    if with_target:
        m = np.zeros((8, 8), np.uint8)
        m[2:6, 2:6] = mask_val
        Image.fromarray(m).save(root / "targets" / f"{sid}.png")


def test_load_sorted_and_binarised(tmp_path):
    for sid in ("e", "b", "d", "a", "c"):
        _write_pair(tmp_path, sid, mask_val=200)
    recs = load_dataset(tmp_path, "saliency")
    assert [r.id for r in recs] == ["a", "b", "c", "d", "e"]
    assert all(set(np.unique(r.target)) == {0.0, 1.0} for r in recs)
    assert recs[0].image.shape == (3, 8, 8)


def test_load_empty_root(tmp_path):
    assert load_dataset(tmp_path, "saliency") == []


def test_orphan_named(tmp_path):
    _write_pair(tmp_path, "ok")
    _write_pair(tmp_path, "lonely", with_target=False)
    with pytest.raises(IngestionError, match="lonely"):
        load_dataset(tmp_path, "saliency")


def test_multi_annotator_average(tmp_path):
    (tmp_path / "images").mkdir()
    ann = tmp_path / "targets" / "x"
    ann.mkdir(parents=True)
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "images" / "x.png")
    Image.fromarray(np.full((8, 8), 255, np.uint8)).save(ann / "a.png")
    Image.fromarray(np.zeros((8, 8), np.uint8)).save(ann / "b.png")
    rec = load_dataset(tmp_path, "edge")[0]
    np.testing.assert_allclose(rec.target, 0.5)


def test_flip(tmp_path):
    _write_pair(tmp_path, "a")
    recs = load_dataset(tmp_path, "saliency", flip=True)
    assert [r.id for r in recs] == ["a", "a_flip"]
    np.testing.assert_array_equal(recs[1].target, recs[0].target[:, ::-1])


def test_pairing_recycles_shorter_side():
    pairs = list(itertools.islice(paired_indices(4, 2, seed=0), 4))
    assert sorted(p[0] for p in pairs) == [0, 1, 2, 3]
    assert sorted(p[1] for p in pairs) == [0, 0, 1, 1]
    assert pairs == list(itertools.islice(paired_indices(4, 2, seed=0), 4))


def test_pairing_kinds(synthetic_records):
    sal, edge = synthetic_records
    for s, e in itertools.islice(paired_batches(sal, edge, seed=1), 10):
        assert (s.kind, e.kind) == ("saliency", "edge")


def test_pairing_resume_offset(synthetic_records):
    sal, edge = synthetic_records
    full = [(s.id, e.id) for s, e in itertools.islice(paired_batches(sal, edge, 5), 9)]
    tail = [(s.id, e.id) for s, e in itertools.islice(paired_batches(sal, edge, 5, start=6), 3)]
    assert full[6:] == tail


def test_pairing_empty():
    with pytest.raises(ConfigurationError):
        next(paired_batches([1], [], 0))
