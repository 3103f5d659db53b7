import numpy as np
import pytest

from raincap import _pykernels, kernels

BACKENDS = kernels.backends()


def loop_box_mean(img, r):
    h, w = img.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    acc += img[min(max(i + di, 0), h - 1), min(max(j + dj, 0), w - 1)]
            out[i, j] = acc / (2 * r + 1) ** 2
    return out


def loop_correlate(img, k):
    h, w = img.shape
    kh, kw = k.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            for a in range(kh):
                for b in range(kw):
                    y, x = i + a - kh // 2, j + b - kw // 2
                    if 0 <= y < h and 0 <= x < w:
                        out[i, j] += k[a, b] * img[y, x]
    return out


def loop_lcs(a, b):
    # memoized recursion, independent of the table-filling kernels
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def f(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + f(i + 1, j + 1)
        return max(f(i + 1, j), f(i, j + 1))

    return f(0, 0)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in BACKENDS


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_box_mean_oracle(name, rng):
    img = rng.standard_normal((9, 7))
    got = kernels.box_mean(img, 2, impl=BACKENDS[name])
    assert np.allclose(got, loop_box_mean(img, 2), atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_correlate_sparse_oracle(name, rng):
    img = np.where(rng.random((12, 10)) > 0.9, rng.standard_normal((12, 10)), 0.0)
    k = np.zeros((5, 5))
    k[:, 2] = 0.2
    k[1, 3] = 0.5
    got = kernels.correlate_sparse(img, k, impl=BACKENDS[name])
    assert np.allclose(got, loop_correlate(img, k), atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_lcs_oracle(name, rng):
    for _ in range(30):
        a = rng.integers(0, 4, rng.integers(0, 9)).tolist()
        b = rng.integers(0, 4, rng.integers(0, 9)).tolist()
        assert kernels.lcs_length(a, b, impl=BACKENDS[name]) == loop_lcs(tuple(a), tuple(b))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_im2col_col2im_backends_agree(dtype, rng):
    x = rng.standard_normal((2, 3, 7, 6)).astype(dtype)
    ref_cols = _pykernels.im2col(x, 3, 3, 2)
    g = rng.standard_normal(ref_cols.shape).astype(dtype)
    ref_img = _pykernels.col2im(g, x.shape, 3, 3, 2)
    for impl in BACKENDS.values():
        assert np.array_equal(kernels.im2col(x, 3, 3, 2, impl=impl), ref_cols)
        assert np.array_equal(kernels.col2im(g, x.shape, 3, 3, 2, impl=impl), ref_img)


def test_col2im_is_im2col_adjoint(rng):
    # <im2col(x), g> == <x, col2im(g)>
    x = rng.standard_normal((1, 2, 6, 5))
    cols = kernels.im2col(x, 3, 2, 1)
    g = rng.standard_normal(cols.shape)
    assert np.isclose((cols * g).sum(), (x * kernels.col2im(g, x.shape, 3, 2, 1)).sum())


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_box_mean_constant(name):
    img = np.full((6, 6), 0.3)
    assert np.allclose(kernels.box_mean(img, 2, impl=BACKENDS[name]), img, atol=1e-15)
