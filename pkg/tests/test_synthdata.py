import numpy as np
import pytest

from flowda import synthdata as S
from flowda.errors import RejectedInput


def test_points_deterministic_and_exact_affine():
    a, b = S.gen_points_pair(101, seed=3), S.gen_points_pair(101, seed=3)
    assert np.array_equal(a.x0, b.x0) and np.array_equal(a.x1, b.x1)
    clean = S.gen_points_pair(50, seed=1, noise_sigma=0.0)
    assert np.array_equal(clean.x0, S.points_affine(clean.x1))
    counts = np.bincount(a.y1.ravel().astype(int))
    assert abs(counts[0] - counts[1]) <= 1
    assert np.array_equal(a.y0, a.y1) and a.alignment == "strong"


def test_points_affine_parameters():
    # rotation by 30 degrees, scale 1.4, then translation
    out = S.points_affine(np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert np.allclose(out[1], [0.5, -0.3])
    assert np.allclose(out[0] - out[1], 1.4 * np.array([np.cos(np.pi / 6), np.sin(np.pi / 6)]))


def test_shapes_deterministic():
    a, b = S.gen_shapes_pair(20, seed=5), S.gen_shapes_pair(20, seed=5)
    for f in ("x0", "x1", "y0", "y1"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = S.gen_shapes_pair(20, seed=6)
    assert not np.array_equal(a.x1, c.x1)


def test_prefix_stability():
    # per-scene seeds: a smaller dataset is a prefix of a larger one
    small, big = S.gen_shapes_pair(5, seed=2), S.gen_shapes_pair(12, seed=2)
    assert np.array_equal(small.x0, big.x0[:5])


def test_strong_alignment():
    ds = S.gen_shapes_pair(200, seed=0)
    assert np.array_equal(ds.y0, ds.y1) and ds.agreement_rate == 1.0
    assert ds.manifest()["agreement_rate"] == 1.0


def test_scene_structure():
    ds = S.gen_shapes_pair(300, seed=1)
    labels = ds.y1.reshape(-1, 16, 16)
    assert set(np.unique(labels)) == {S.BACKGROUND, S.RECT, S.DISK}
    assert np.all([(lab != S.BACKGROUND).any() for lab in labels])


def test_weak_full_perturbation():
    ds = S.gen_shapes_pair(100, seed=0, weak_p=1.0)
    assert ds.alignment == "weak"
    for y0, y1 in zip(ds.y0, ds.y1):
        shapes = (y0 != 0) | (y1 != 0)
        assert np.mean(y0[shapes] == y1[shapes]) < 1.0


def test_weak_agreement_bound():
    ds = S.gen_shapes_pair(400, seed=0, weak_p=0.2)
    changed = np.mean([not np.array_equal(a, b) for a, b in zip(ds.y0, ds.y1)])
    assert 0.1 < changed < 0.3
    assert ds.agreement_rate >= 1 - 0.2


def test_splits_disjoint():
    tr = S.gen_shapes_pair(50, seed=0, split="train")
    te = S.gen_shapes_pair(50, seed=0, split="test")
    va = S.gen_shapes_pair(50, seed=0, split="val")
    assert not np.any([np.array_equal(a, b) for a in tr.x0 for b in te.x0])
    assert not np.array_equal(te.x1, va.x1)


def test_speckle_mean():
    f = S.speckle(np.random.default_rng(0), (1_000_000,))
    assert abs(f.mean() - 1.0) < 0.01 and f.min() >= 0


def test_optical_levels_recoverable():
    ds = S.gen_shapes_pair(50, seed=0)
    for cls, level in enumerate(S.OPTICAL_LEVELS):
        assert abs(ds.x1[ds.y1 == cls].mean() - level) < 0.01


def test_rejects():
    with pytest.raises(RejectedInput):
        S.gen_shapes_pair(10, side=8)
    with pytest.raises(RejectedInput):
        S.gen_shapes_pair(10, weak_p=1.5)
    with pytest.raises(RejectedInput):
        S.gen_points_pair(0)
    with pytest.raises(RejectedInput):
        S.generate("voxels", 3)


def test_larger_side():
    ds = S.gen_shapes_pair(10, side=24, seed=0)
    assert ds.x0.shape == (10, 576)
