import numpy as np
import pytest

from tbscreen.phantoms import lung_phantom
from tbscreen.segmentation import (IDENTITY, AtlasEntry, RegistrationError, Similarity, bhattacharyya, build_prior,
                                   histogram64, iou, lung_energy, ncc, projection_profiles, rank_references, register,
                                   segment_lungs, similarity, warp)
from tbscreen.tensor import ShapeError


def test_bhattacharyya_bounds(rng):
    p = rng.random(64)
    p /= p.sum()
    assert bhattacharyya(p, p) == pytest.approx(1.0)
    q = np.zeros(64)
    q[0] = 1.0
    r = np.zeros(64)
    r[1] = 1.0
    assert bhattacharyya(q, r) == 0.0
    with pytest.raises(ValueError):
        bhattacharyya(p, p[:32] / p[:32].sum())
    with pytest.raises(ValueError):
        bhattacharyya(p * 2, p)


def test_histogram_edges():
    h = histogram64(np.array([0.0, 1.0, 0.5, 1 / 64]))
    assert h[0] == 0.25 and h[63] == 0.25 and h[32] == 0.25 and h[1] == 0.25


def test_profiles_and_errors(rng):
    img = rng.random((5, 7))
    rows, cols = projection_profiles(img)
    assert rows.sum() == pytest.approx(1.0) and cols.shape == (7,)
    with pytest.raises(ValueError):
        projection_profiles(np.zeros((3, 3)))


def test_similarity_self_is_one_and_ranking(rng):
    img, _, atlas = lung_phantom(3, size=64)
    assert similarity(img, img) == pytest.approx(1.0)
    other = AtlasEntry(rng.random((64, 64)), np.zeros((64, 64), np.uint8))
    ranked = rank_references(img, [other, AtlasEntry(img.copy(), atlas[0].mask)], 2)
    assert [r[0] for r in ranked] == [1, 0]
    assert ranked[0][1] >= ranked[1][1]


def test_rank_resizes_entries():
    img, _, atlas = lung_phantom(0, size=64)
    small = [AtlasEntry(e.image[::2, ::2], e.mask[::2, ::2]) for e in atlas]
    ranked = rank_references(img, small, 3)
    assert len(ranked) == 3 and all(r[2].image.shape == (64, 64) for r in ranked)


def test_warp_identity_and_shift():
    img = np.zeros((20, 20))
    img[8:12, 8:12] = 1.0
    np.testing.assert_allclose(warp(img, IDENTITY), img, atol=1e-12)
    shifted = warp(img, Similarity(tx=3.0), order=0)
    np.testing.assert_array_equal(shifted[8:12, 11:15], 1.0)
    assert shifted.sum() == 16


def test_register_recovers_translation():
    img, mask, _ = lung_phantom(1, size=96, noise=0.0)
    moved = AtlasEntry(warp(img, Similarity(tx=4.0, ty=-3.0)), warp(mask.astype(float), Similarity(tx=4.0, ty=-3.0), 0).astype(np.uint8))
    tf, warped = register(moved, img)
    assert tf.tx == pytest.approx(-4.0, abs=0.6) and tf.ty == pytest.approx(3.0, abs=0.6)
    assert iou(warped.mask, mask) > 0.95


def test_register_never_worse_than_identity(rng):
    fixed = rng.random((32, 32))
    moving = AtlasEntry(rng.random((32, 32)), np.zeros((32, 32), np.uint8))
    _, warped = register(moving, fixed)
    assert ncc(warped.image, fixed) >= ncc(moving.image, fixed) - 1e-12


def test_register_errors():
    e = AtlasEntry(np.ones((16, 16)), np.zeros((16, 16), np.uint8))
    with pytest.raises(RegistrationError):
        register(e, np.full((16, 16), 0.5))
    with pytest.raises(ShapeError):
        register(e, np.zeros((16, 17)))


def test_prior_and_energy():
    a = AtlasEntry(np.zeros((4, 4)), np.ones((4, 4), np.uint8))
    b = AtlasEntry(np.zeros((4, 4)), np.zeros((4, 4), np.uint8))
    prior = build_prior([a, b, a, a])
    np.testing.assert_array_equal(prior, 0.75)
    e = lung_energy(np.zeros((4, 4)), prior)
    np.testing.assert_allclose(e.unary[..., 0], -np.log(0.75 * (1 - 2e-6) + 1e-6))
    np.testing.assert_array_equal(e.horizontal, 1.0)
    assert e.lam == 2.0
    with pytest.raises(ValueError):
        build_prior([])


def test_segment_single_phantom():
    img, mask, atlas = lung_phantom(11)
    assert iou(segment_lungs(img, atlas), mask) >= 0.85


def test_iou():
    a = np.array([[1, 1, 0, 0]])
    assert iou(a, np.array([[0, 1, 1, 0]])) == pytest.approx(1 / 3)
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


def test_atlas_entry_validation():
    with pytest.raises(ShapeError):
        AtlasEntry(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        AtlasEntry(np.zeros((3, 3)), np.full((3, 3), 2))
