import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcalib.correlation import build_correlation_volume, build_pyramid, lookup


def naive_volume(a, b):
    H, W, _ = a.shape
    h, w, _ = b.shape
    C = np.zeros((H, W, h, w))
    for i in range(H):
        for j in range(W):
            for k in range(h):
                for l in range(w):
                    C[i, j, k, l] = sum(float(x) * float(y) for x, y in zip(a[i, j], b[k, l]))
    return C


def block_mean(c):
    H, W, h, w = c.shape
    out = np.zeros((H, W, h // 2, w // 2))
    for k in range(h // 2):
        for l in range(w // 2):
            out[:, :, k, l] = (c[:, :, 2 * k, 2 * l] + c[:, :, 2 * k + 1, 2 * l]
                               + c[:, :, 2 * k, 2 * l + 1] + c[:, :, 2 * k + 1, 2 * l + 1]) / 4
    return out


def test_all_ones_volume():
    C = build_correlation_volume(np.ones((8, 8, 4)), np.ones((8, 8, 4)))
    assert C.shape == (8, 8, 8, 8) and np.all(C == 4)


def test_one_hot_volume_is_kronecker():
    a = np.eye(64).reshape(8, 8, 64)
    C = build_correlation_volume(a, a)
    np.testing.assert_array_equal(C.reshape(64, 64), np.eye(64))


def test_volume_matches_naive_small_integers():
    rng = np.random.default_rng(0)
    a = rng.integers(-5, 5, (8, 8, 3)).astype(float)
    b = rng.integers(-5, 5, (8, 8, 3)).astype(float)
    np.testing.assert_array_equal(build_correlation_volume(a, b), naive_volume(a, b))


def test_volume_errors():
    with pytest.raises(ValueError):
        build_correlation_volume(np.ones((8, 8, 4)), np.ones((8, 8, 3)))
    with pytest.raises(ValueError):
        build_correlation_volume(np.ones((8, 12, 4)), np.ones((8, 8, 4)))


def test_pyramid_constant():
    p = build_pyramid(np.full((8, 8, 16, 16), 2.5))
    assert len(p) == 4
    assert [lvl.shape[2:] for lvl in p.levels] == [(16, 16), (8, 8), (4, 4), (2, 2)]
    assert all(np.all(lvl == 2.5) for lvl in p.levels)


def test_pyramid_block_means_and_global_mean():
    rng = np.random.default_rng(1)
    c = rng.normal(size=(4, 4, 16, 16))
    p = build_pyramid(c)
    for k in range(1, 4):
        np.testing.assert_allclose(p.levels[k], block_mean(p.levels[k - 1]), rtol=1e-12, atol=1e-15)
        assert p.levels[k].mean() == pytest.approx(c.mean(), rel=1e-6, abs=1e-12)
    with pytest.raises(ValueError):
        build_pyramid(np.zeros((2, 2, 12, 16)))


def test_lookup_radius0_integer_coords():
    rng = np.random.default_rng(2)
    c = rng.normal(size=(8, 8, 8, 8))
    p = build_pyramid(c)
    coords = np.stack(np.meshgrid(np.arange(8.0), np.arange(8.0), indexing="xy"), axis=-1)
    out = lookup(p, coords, 0)
    assert out.shape == (8, 8, 4)
    for i in range(8):
        for j in range(8):
            assert out[i, j, 0] == c[i, j, i, j]


def test_lookup_half_pixel_and_out_of_bounds():
    rng = np.random.default_rng(3)
    c = rng.normal(size=(8, 8, 8, 8))
    p = build_pyramid(c)
    coords = np.zeros((8, 8, 2))
    coords[..., 0] = 2.5
    coords[..., 1] = 3.0
    out = lookup(p, coords, 0)
    np.testing.assert_allclose(out[..., 0], 0.5 * (c[:, :, 3, 2] + c[:, :, 3, 3]), atol=1e-14)
    far = np.full((8, 8, 2), 100.0)
    assert np.all(lookup(p, far, 1) == 0)
    neg = np.full((8, 8, 2), -100.0)
    assert np.all(lookup(p, neg, 1) == 0)


def test_lookup_window_layout():
    c = np.zeros((8, 8, 8, 8))
    c[:, :, 4, 5] = 1.0  # row 4, column 5
    p = build_pyramid(c)
    coords = np.zeros((8, 8, 2))
    coords[..., 0], coords[..., 1] = 4.0, 4.0
    out = lookup(p, coords, 1)
    assert out.shape == (8, 8, 4 * 9)
    # offsets dy-major: (dy=0, dx=+1) is index 5
    np.testing.assert_array_equal(out[0, 0, :9], [0, 0, 0, 0, 0, 1, 0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), radius=st.integers(0, 3))
def test_lookup_is_linear(seed, radius):
    rng = np.random.default_rng(seed)
    c1, c2 = rng.normal(size=(2, 8, 8, 8, 8))
    coords = rng.uniform(-2, 10, size=(8, 8, 2))
    lhs = lookup(build_pyramid(c1 + c2), coords, radius)
    rhs = lookup(build_pyramid(c1), coords, radius) + lookup(build_pyramid(c2), coords, radius)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_lookup_rejects_bad_input():
    p = build_pyramid(np.zeros((8, 8, 8, 8)))
    with pytest.raises(ValueError):
        lookup(p, np.zeros((8, 8, 2)), -1)
    with pytest.raises(ValueError):
        lookup(p, np.zeros((4, 8, 2)), 0)
